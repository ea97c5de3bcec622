"""Exception types used across the package."""


class InvalidArgument(ValueError):
    """An operation's preconditions were violated."""


class NoDataError(RuntimeError):
    """No usable (present, non-stale) modality was available."""


class FormatError(ValueError):
    """A file or stream does not follow its format.

    ``offset`` is a byte offset for binary formats, ``line`` a 1-based line
    number for text formats, ``chunk`` the offending RIFF chunk id for WAV.
    """

    def __init__(self, message, *, offset=None, line=None, chunk=None, path=None):
        self.message = message
        self.offset = offset
        self.line = line
        self.chunk = chunk
        self.path = path
        super().__init__(message)

    def __str__(self):
        where = []
        if self.path is not None:
            where.append(str(self.path))
        if self.chunk is not None:
            where.append(f"chunk {self.chunk!r}")
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.offset is not None:
            where.append(f"offset {self.offset}")
        return f"{self.message} ({', '.join(where)})" if where else self.message


class ValidationError(FormatError):
    """Content is well-formed but invalid; ``problems`` lists every offender."""

    def __init__(self, problems, *, path=None):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems), path=path)
