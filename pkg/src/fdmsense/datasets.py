"""On-disk formats: PCM16 WAV, accelerometer CSV, 8-bit PGM frames and the
corpus manifest.

Readers are strict: every structural inconsistency raises ``FormatError``
(``ValidationError`` for manifests) and never returns partial data. The
streaming readers used by the monitor accept non-seekable inputs such as
named pipes.
"""

from __future__ import annotations

import io
import json
import math
import re
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .errors import FormatError, InvalidArgument, ValidationError
from .signal_core import AudioWindow, FaultClass, ThermalFrame, VibrationWindow

PCM_SCALE = 32768.0
ACCEL_HEADER = "t_ms,x,y,z"
FRAME_RE = re.compile(r"^frame_(\d+)\.pgm$")
MANIFEST_VERSION = 1
_UNKNOWN_SIZES = (0, 0xFFFFFFFF)


# -- WAV -------------------------------------------------------------------------

def quantize_pcm16(samples) -> np.ndarray:
    s = np.asarray(samples, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise InvalidArgument("non-finite audio sample")
    if np.any(np.abs(s) > 1.0):
        raise InvalidArgument("audio samples must lie in [-1, 1]")
    return np.clip(np.floor(s * PCM_SCALE + 0.5), -32768, 32767).astype("<i2")


def write_wav(path, samples, sample_rate_hz: int) -> None:
    """Write mono (n,) or multichannel (n, channels) samples as PCM16."""
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim == 1:
        s = s[:, None]
    if s.ndim != 2 or s.shape[1] < 1:
        raise InvalidArgument("samples must be (n,) or (n, channels)")
    pcm = quantize_pcm16(s)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(s.shape[1])
        w.setsampwidth(2)
        w.setframerate(int(sample_rate_hz))
        w.writeframes(pcm.tobytes())


@dataclass
class WavInfo:
    channels: int
    sample_rate_hz: int
    data_size: int | None  # None when the stream does not declare it


def _read_exact(f: BinaryIO, n: int, what: str, chunk: str | None, offset: int) -> bytes:
    b = f.read(n)
    if b is None:
        b = b""
    while len(b) < n:
        more = f.read(n - len(b))
        if not more:
            raise FormatError(f"truncated {what}", chunk=chunk, offset=offset)
        b += more
    return b


def _parse_fmt(body: bytes, offset: int) -> tuple[int, int]:
    if len(body) < 16:
        raise FormatError("fmt chunk shorter than 16 bytes", chunk="fmt ", offset=offset)
    tag, channels, rate, byte_rate, block_align, bits = struct.unpack("<HHIIHH", body[:16])
    if tag != 1 or bits != 16:
        raise FormatError(f"unsupported encoding (format tag {tag}, {bits} bits); only PCM16 is read",
                          chunk="fmt ", offset=offset)
    if len(body) not in (16, 18) or (len(body) == 18 and body[16:18] != b"\0\0"):
        raise FormatError("unexpected fmt extension for PCM", chunk="fmt ", offset=offset)
    if channels < 1 or rate < 1:
        raise FormatError("channel count and sample rate must be positive", chunk="fmt ", offset=offset)
    if block_align != 2 * channels or byte_rate != rate * block_align:
        raise FormatError("inconsistent block_align/byte_rate", chunk="fmt ", offset=offset)
    return channels, rate


def read_wav_header(f: BinaryIO, total_len: int | None = None) -> WavInfo:
    """Consume the RIFF header up to the start of sample data.

    With ``total_len`` (regular files) all declared sizes must agree with it;
    in streaming mode the RIFF and data sizes may be 0 or 0xFFFFFFFF.
    """
    head = _read_exact(f, 12, "RIFF header", "RIFF", 0)
    if head[:4] != b"RIFF":
        raise FormatError("not a RIFF file", chunk="RIFF", offset=0)
    riff_size = struct.unpack("<I", head[4:8])[0]
    if head[8:12] != b"WAVE":
        raise FormatError("RIFF form is not WAVE", chunk="RIFF", offset=8)
    if total_len is not None and riff_size != total_len - 8:
        raise FormatError(f"RIFF size {riff_size} disagrees with file length {total_len}",
                          chunk="RIFF", offset=4)
    if total_len is None and riff_size in _UNKNOWN_SIZES:
        riff_end = None
    else:
        riff_end = riff_size + 8
    pos = 12
    fmt = None
    while True:
        if riff_end is not None and pos + 8 > riff_end:
            raise FormatError("no data chunk", chunk="data", offset=pos)
        hdr = _read_exact(f, 8, "chunk header", None, pos)
        cid = hdr[:4].decode("latin-1")
        size = struct.unpack("<I", hdr[4:])[0]
        if not all(32 <= c < 127 for c in hdr[:4]):
            raise FormatError("invalid chunk id", chunk=cid, offset=pos)
        body_start = pos + 8
        if cid == "data":
            if fmt is None:
                raise FormatError("data chunk before fmt chunk", chunk="data", offset=pos)
            channels, rate = fmt
            if riff_end is None and size in _UNKNOWN_SIZES:
                return WavInfo(channels, rate, None)
            if riff_end is not None and body_start + size > riff_end:
                raise FormatError(f"data chunk of {size} bytes overruns the file", chunk="data", offset=pos)
            if size % (2 * channels):
                raise FormatError("data size is not a whole number of frames", chunk="data", offset=pos)
            return WavInfo(channels, rate, size)
        padded = size + (size & 1)
        if riff_end is not None and body_start + padded > riff_end:
            raise FormatError(f"chunk of {size} bytes overruns the file", chunk=cid, offset=pos)
        if size > 1 << 24:
            raise FormatError("implausibly large header chunk", chunk=cid, offset=pos)
        body = _read_exact(f, padded, "chunk body", cid, body_start)
        if cid == "fmt ":
            if fmt is not None:
                raise FormatError("duplicate fmt chunk", chunk="fmt ", offset=pos)
            fmt = _parse_fmt(body[:size], pos)
        pos = body_start + padded


def _check_trailing_chunks(data: bytes, pos: int) -> None:
    while pos < len(data):
        if pos + 8 > len(data):
            raise FormatError("truncated trailing chunk header", offset=pos)
        cid = data[pos:pos + 4]
        size = struct.unpack("<I", data[pos + 4:pos + 8])[0]
        name = cid.decode("latin-1")
        if not all(32 <= c < 127 for c in cid):
            raise FormatError("invalid chunk id", chunk=name, offset=pos)
        if name in ("data", "fmt "):
            raise FormatError("duplicate chunk", chunk=name, offset=pos)
        end = pos + 8 + size + (size & 1)
        if end > len(data):
            raise FormatError(f"chunk of {size} bytes overruns the file", chunk=name, offset=pos)
        pos = end


def parse_wav(data: bytes) -> tuple[np.ndarray, int]:
    f = io.BytesIO(data)
    info = read_wav_header(f, total_len=len(data))
    start = f.tell()
    payload = data[start:start + info.data_size]
    end = start + info.data_size + (info.data_size & 1)
    if end > len(data):
        raise FormatError("missing pad byte after odd-sized data chunk", chunk="data", offset=start)
    _check_trailing_chunks(data, end)
    pcm = np.frombuffer(payload, dtype="<i2").reshape(-1, info.channels)
    return pcm.astype(np.float64) / PCM_SCALE, info.sample_rate_hz


def read_wav(path) -> tuple[np.ndarray, int]:
    """Samples as (n, channels) floats in [-1, 1) and the sample rate."""
    path = Path(path)
    try:
        return parse_wav(path.read_bytes())
    except FormatError as e:
        e.path = path
        raise


class WavStream:
    """Incremental PCM16 reader for files or pipes."""

    def __init__(self, f: BinaryIO):
        self.f = f
        self.info = read_wav_header(f)
        self.remaining = self.info.data_size
        self.frame_bytes = 2 * self.info.channels

    def read(self, n_frames: int) -> np.ndarray | None:
        """Up to ``n_frames`` frames as (k, channels); None at end of data."""
        want = n_frames * self.frame_bytes
        if self.remaining is not None:
            want = min(want, self.remaining)
        if want == 0:
            return None
        buf = b""
        while len(buf) < want:
            more = self.f.read(want - len(buf))
            if not more:
                break
            buf += more
        if not buf:
            if self.remaining:
                raise FormatError("stream ended before declared data size", chunk="data")
            return None
        if len(buf) % self.frame_bytes:
            raise FormatError("stream ended mid-frame", chunk="data")
        if self.remaining is not None:
            self.remaining -= len(buf)
        pcm = np.frombuffer(buf, dtype="<i2").reshape(-1, self.info.channels)
        return pcm.astype(np.float64) / PCM_SCALE


# -- accelerometer CSV ------------------------------------------------------------

@dataclass
class AccelData:
    t_ms: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __len__(self):
        return self.t_ms.size


def write_accel_csv(path, t_ms, x, y, z) -> None:
    """Header ``t_ms,x,y,z``; integer milliseconds, axes to 6 significant digits."""
    cols = [np.asarray(c, dtype=np.float64) for c in (t_ms, x, y, z)]
    if len({c.shape for c in cols}) != 1 or cols[0].ndim != 1:
        raise InvalidArgument("columns must be equal-length 1-D sequences")
    t = cols[0]
    if not all(np.all(np.isfinite(c)) for c in cols):
        raise InvalidArgument("non-finite accelerometer value")
    if np.any(np.diff(t) < 0):
        raise InvalidArgument("t_ms must be non-decreasing")
    if np.any(t != np.round(t)) or np.any(t < 0):
        raise InvalidArgument("t_ms must be non-negative integers")
    lines = [ACCEL_HEADER]
    for ti, xi, yi, zi in zip(t.astype(np.int64).tolist(), *(c.tolist() for c in cols[1:])):
        lines.append(f"{ti},{xi:.6g},{yi:.6g},{zi:.6g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def _parse_number(cell: str, name: str, line: int) -> float:
    cell = cell.strip()
    if not re.fullmatch(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?", cell):
        raise FormatError(f"non-numeric {name} value {cell!r}", line=line)
    v = float(cell)
    if not math.isfinite(v):
        raise FormatError(f"non-finite {name} value", line=line)
    return v


def iter_accel_lines(lines, strict: bool = True) -> Iterator[tuple[float, float, float, float] | FormatError]:
    """Parse CSV lines (header first). Every line, the last included, must end
    in a newline. In non-strict mode bad rows are yielded as ``FormatError``
    objects and skipped instead of raised."""
    it = iter(lines)
    try:
        header = next(it)
    except StopIteration:
        raise FormatError("missing header", line=1) from None
    if header.rstrip("\r\n") != ACCEL_HEADER or not header.endswith("\n"):
        raise FormatError(f"expected header {ACCEL_HEADER!r} ending in a newline", line=1)
    last_t = -math.inf
    for lineno, raw in enumerate(it, start=2):
        try:
            if not raw.endswith("\n"):
                raise FormatError("unterminated final line (truncated file?)", line=lineno)
            text = raw.rstrip("\r\n")
            if text == "":
                raise FormatError("blank line", line=lineno)
            cells = text.split(",")
            if len(cells) != 4:
                raise FormatError(f"expected 4 columns, found {len(cells)}", line=lineno)
            row = tuple(_parse_number(c, n, lineno) for c, n in zip(cells, ("t_ms", "x", "y", "z")))
            if row[0] < last_t:
                raise FormatError("t_ms decreases", line=lineno)
            last_t = row[0]
            yield row
        except FormatError as e:
            if strict:
                raise
            yield e


def parse_accel_csv(text: str) -> AccelData:
    parts = text.split("\n")
    lines = [line + "\n" for line in parts[:-1]] + ([parts[-1]] if parts[-1] else [])
    rows = list(iter_accel_lines(lines))
    arr = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return AccelData(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), arr[:, 3].copy())


def read_accel_csv(path) -> AccelData:
    path = Path(path)
    try:
        raw = path.read_bytes()
        try:
            text = raw.decode("ascii")
        except UnicodeDecodeError as e:
            raise FormatError("non-ASCII byte", offset=e.start) from None
        return parse_accel_csv(text)
    except FormatError as e:
        e.path = path
        raise


# -- PGM -------------------------------------------------------------------------

_PNM_WS = b" \t\r\n"


def quantize_u8(pixels) -> np.ndarray:
    p = np.asarray(pixels, dtype=np.float64)
    if not np.all(np.isfinite(p)) or p.min(initial=0.0) < 0.0 or p.max(initial=0.0) > 1.0:
        raise InvalidArgument("pixel intensities must lie in [0, 1]")
    return np.floor(p * 255.0 + 0.5).astype(np.uint8)


def pgm_bytes(pixels) -> bytes:
    q = quantize_u8(pixels)
    if q.ndim != 2 or q.size == 0:
        raise InvalidArgument("a PGM frame must be a non-empty 2-D array")
    h, w = q.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes()


def write_pgm(path, pixels) -> None:
    Path(path).write_bytes(pgm_bytes(pixels))


def _read_pgm_frame(f: BinaryIO, start: int = 0) -> tuple[np.ndarray, int] | None:
    """One P5 frame from ``f``; returns (pixels in [0, 1], bytes consumed) or
    None at a clean end of input. ``#`` comments are allowed in the header."""
    magic = f.read(2)
    if not magic:
        return None
    if magic != b"P5":
        raise FormatError("expected P5", offset=start)
    pos = start + 2
    c = f.read(1)
    if not c or c not in _PNM_WS:
        raise FormatError("missing whitespace after magic", offset=pos)
    tokens = []
    while len(tokens) < 3:
        if not c:
            raise FormatError("truncated PGM header", offset=pos)
        if c in _PNM_WS:
            pos += 1
            c = f.read(1)
        elif c == b"#":
            while c and c not in b"\r\n":
                pos += 1
                c = f.read(1)
        else:
            tok = b""
            while c and c not in _PNM_WS and c != b"#":
                if len(tok) >= 10:
                    raise FormatError("oversized PGM header field", offset=pos)
                tok += c
                pos += 1
                c = f.read(1)
            if not tok.isdigit():
                raise FormatError(f"invalid PGM header field {tok!r}", offset=pos - len(tok))
            tokens.append(int(tok))
    # exactly one whitespace byte (already read into c) separates maxval from the payload
    if not c or c not in _PNM_WS:
        raise FormatError("missing whitespace after maxval", offset=pos)
    pos += 1
    w, h, maxval = tokens
    if w == 0 or h == 0:
        raise FormatError("PGM dimensions must be positive", offset=start)
    if maxval != 255:
        raise FormatError(f"maxval {maxval} unsupported; expected 255", offset=pos - 1)
    if w * h > 1 << 26:
        raise FormatError("implausible PGM dimensions", offset=start)
    payload = f.read(w * h) or b""
    while len(payload) < w * h:
        more = f.read(w * h - len(payload))
        if not more:
            raise FormatError(f"PGM payload has {len(payload)} of {w * h} bytes", offset=pos + len(payload))
        payload += more
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0
    return pixels, pos + w * h - start


def parse_pgm(data: bytes) -> np.ndarray:
    f = io.BytesIO(data)
    got = _read_pgm_frame(f)
    if got is None:
        raise FormatError("expected P5", offset=0)
    pixels, used = got
    if used != len(data):
        raise FormatError("trailing bytes after PGM payload", offset=used)
    return pixels


def read_pgm(path) -> np.ndarray:
    path = Path(path)
    try:
        return parse_pgm(path.read_bytes())
    except FormatError as e:
        e.path = path
        raise


def iter_pgm_stream(f: BinaryIO) -> Iterator[np.ndarray]:
    """Frames from a stream of back-to-back P5 images."""
    pos = 0
    while True:
        got = _read_pgm_frame(f, pos)
        if got is None:
            return
        pixels, used = got
        pos += used
        yield pixels


def frame_name(index: int) -> str:
    return f"frame_{index:05d}.pgm"


def write_thermal_dir(directory, frames) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(frames):
        px = fr.pixels if isinstance(fr, ThermalFrame) else fr
        write_pgm(d / frame_name(i), px)


def read_thermal_dir(directory) -> tuple[list[np.ndarray], list[str]]:
    """Frames ordered by number plus warnings for gaps in the numbering."""
    d = Path(directory)
    numbered = []
    for p in d.iterdir():
        m = FRAME_RE.match(p.name)
        if m:
            numbered.append((int(m.group(1)), p))
    numbered.sort()
    frames, warnings = [], []
    shape = None
    for k, (num, p) in enumerate(numbered):
        px = read_pgm(p)
        if shape is None:
            shape = px.shape
        elif px.shape != shape:
            raise FormatError(f"dimension mismatch: {px.shape[1]}x{px.shape[0]} vs {shape[1]}x{shape[0]}", path=p)
        if k > 0 and num != numbered[k - 1][0] + 1:
            prev = numbered[k - 1][0]
            warnings.append(f"gap in frame numbering: {prev} -> {num}")
        frames.append(px)
    return frames, warnings


# -- manifest --------------------------------------------------------------------

_ENTRY_KEYS = {"scene_id", "label", "audio_path", "vibration_path", "thermal_dir", "duration_s", "rates"}
_RATE_KEYS = {"audio_hz", "vibration_hz", "thermal_fps"}


@dataclass
class ManifestEntry:
    scene_id: str
    label: FaultClass
    audio_path: str
    vibration_path: str
    thermal_dir: str
    duration_s: float
    rates: dict[str, int]

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "label": self.label.label,
            "audio_path": self.audio_path,
            "vibration_path": self.vibration_path,
            "thermal_dir": self.thermal_dir,
            "duration_s": self.duration_s,
            "rates": dict(self.rates),
        }


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    format_version: int = MANIFEST_VERSION
    root: Path | None = None  # directory the relative paths resolve against

    def resolve(self, rel: str) -> Path:
        return (self.root or Path(".")) / rel

    def labels(self) -> list[FaultClass]:
        return sorted({e.label for e in self.entries})


def manifest_bytes(manifest: Manifest) -> bytes:
    doc = {"format_version": manifest.format_version,
           "entries": [e.to_json() for e in manifest.entries]}
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")


def write_manifest(path, manifest: Manifest) -> None:
    Path(path).write_bytes(manifest_bytes(manifest))


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def parse_manifest(data: bytes, root: Path | None, check_files: bool = True, source=None) -> Manifest:
    """Validate and build a manifest, collecting every problem before raising."""
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValidationError([f"invalid JSON: {e}"], path=source) from None
    problems = []
    if not isinstance(doc, dict):
        raise ValidationError(["manifest root must be an object"], path=source)
    extra = set(doc) - {"format_version", "entries"}
    if extra:
        problems.append(f"unknown top-level keys {sorted(extra)}")
    if doc.get("format_version") != MANIFEST_VERSION or not _is_int(doc.get("format_version")):
        problems.append(f"format_version must be {MANIFEST_VERSION}")
    raw_entries = doc.get("entries")
    if not isinstance(raw_entries, list):
        problems.append("entries must be a list")
        raw_entries = []
    entries, seen = [], set()
    for i, e in enumerate(raw_entries):
        where = f"entries[{i}]"
        if not isinstance(e, dict):
            problems.append(f"{where}: not an object")
            continue
        keys = set(e)
        if keys != _ENTRY_KEYS:
            if _ENTRY_KEYS - keys:
                problems.append(f"{where}: missing keys {sorted(_ENTRY_KEYS - keys)}")
            if keys - _ENTRY_KEYS:
                problems.append(f"{where}: unknown keys {sorted(keys - _ENTRY_KEYS)}")
            continue
        ok = True
        sid = e["scene_id"]
        if not isinstance(sid, str) or not sid:
            problems.append(f"{where}: scene_id must be a non-empty string")
            ok = False
        elif sid in seen:
            problems.append(f"{where}: duplicate scene_id {sid!r}")
            ok = False
        else:
            seen.add(sid)
        label = None
        if not isinstance(e["label"], str):
            problems.append(f"{where}: label must be a string")
            ok = False
        else:
            # on disk only the canonical lowercase spelling is accepted
            label = next((f for f in FaultClass if f.label == e["label"]), None)
            if label is None:
                problems.append(f"{where}: unknown fault class {e['label']!r}")
                ok = False
        for key in ("audio_path", "vibration_path", "thermal_dir"):
            v = e[key]
            if not isinstance(v, str) or not v or Path(v).is_absolute():
                problems.append(f"{where}: {key} must be a relative path")
                ok = False
            elif check_files:
                p = (root or Path(".")) / v
                exists = p.is_dir() if key == "thermal_dir" else p.is_file()
                if not exists:
                    problems.append(f"{where}: missing file {v}")
                    ok = False
        dur = e["duration_s"]
        if isinstance(dur, bool) or not isinstance(dur, (int, float)) or not math.isfinite(dur) or dur <= 0:
            problems.append(f"{where}: duration_s must be a positive number")
            ok = False
        rates = e["rates"]
        if not isinstance(rates, dict) or set(rates) != _RATE_KEYS or not all(
                _is_int(v) and v > 0 for v in rates.values()):
            problems.append(f"{where}: rates must hold positive integers {sorted(_RATE_KEYS)}")
            ok = False
        if ok:
            entries.append(ManifestEntry(sid, label, e["audio_path"], e["vibration_path"],
                                         e["thermal_dir"], float(dur), dict(rates)))
    if problems:
        raise ValidationError(problems, path=source)
    return Manifest(entries, MANIFEST_VERSION, root)


def read_manifest(path, check_files: bool = True) -> Manifest:
    path = Path(path)
    return parse_manifest(path.read_bytes(), path.parent, check_files, source=path)


# -- scenes ----------------------------------------------------------------------

@dataclass
class SceneData:
    audio: AudioWindow
    vibration: VibrationWindow
    thermal: list[ThermalFrame]
    label: FaultClass | None = None


def load_scene(manifest: Manifest, entry: ManifestEntry) -> SceneData:
    samples, rate = read_wav(manifest.resolve(entry.audio_path))
    if samples.shape[1] == 1:
        left = right = samples[:, 0]
    elif samples.shape[1] == 2:
        left, right = samples[:, 0], samples[:, 1]
    else:
        raise FormatError(f"expected 1 or 2 audio channels, found {samples.shape[1]}",
                          path=manifest.resolve(entry.audio_path))
    accel = read_accel_csv(manifest.resolve(entry.vibration_path))
    if len(accel) == 0:
        raise FormatError("empty accelerometer file", path=manifest.resolve(entry.vibration_path))
    frames, _ = read_thermal_dir(manifest.resolve(entry.thermal_dir))
    if not frames:
        raise FormatError("no thermal frames", path=manifest.resolve(entry.thermal_dir))
    fps = entry.rates["thermal_fps"]
    thermal = [ThermalFrame(px, px.shape[1], px.shape[0], int(round(i * 1000 / fps)))
               for i, px in enumerate(frames)]
    return SceneData(
        AudioWindow(left, right, rate),
        VibrationWindow(accel.x, accel.y, accel.z, entry.rates["vibration_hz"], int(accel.t_ms[0])),
        thermal,
        entry.label,
    )
