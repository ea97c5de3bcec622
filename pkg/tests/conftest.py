import importlib

import numpy as np
import pytest

from fdmsense._kernels import _fallback


def _native_or_none():
    try:
        return importlib.import_module("fdmsense._kernels._native")
    except ImportError:
        return None


NATIVE = _native_or_none()
BACKENDS = [pytest.param(_fallback, id="python")]
if NATIVE is not None:
    BACKENDS.append(pytest.param(NATIVE, id="native"))


@pytest.fixture(params=BACKENDS)
def kernels(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting -----------------------------------------------------------
# Each acceptance test records one verdict line; the lines are repeated in the
# terminal summary so they appear in captured runs as well.

_VERDICTS: dict[str, str] = {}


@pytest.fixture
def verdict(request):
    def record(criterion: int, ok: bool, detail: str):
        line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[request.node.nodeid] = line
        print(line)
        assert ok, line
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and rep.failed and "acceptance" in item.nodeid and item.nodeid not in _VERDICTS:
        num = item.name.split("_")[2] if item.name.startswith("test_criterion_") else "?"
        msg = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
        _VERDICTS[item.nodeid] = f"criterion {num:>2}: FAIL  {type(call.excinfo.value).__name__}: {msg}"


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS.values()):
            terminalreporter.write_line(line)
