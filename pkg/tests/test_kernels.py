import numpy as np
import pytest
from scipy import signal

from fdmsense import _kernels
from fdmsense.rng import MASK64

from conftest import NATIVE
from oracles import conv2d_loops


def _xoshiro_ref(state, n):
    s = [int(v) for v in state]
    out = []
    rotl = lambda x, k: ((x << k) | (x >> (64 - k))) & MASK64
    for _ in range(n):
        out.append((rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64)
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
    return out, s


def test_xoshiro_published_vector(kernels):
    state = np.array([1, 2, 3, 4], dtype=np.uint64)
    out = kernels.xoshiro_fill(state, 4)
    assert out.tolist() == [11520, 0, 1509978240, 1215971899390074240]


def test_xoshiro_matches_reference_and_advances_state(kernels):
    state = np.array([0x0123456789ABCDEF, 0xDEADBEEF, 7, 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    ref, ref_state = _xoshiro_ref(state, 50)
    out = kernels.xoshiro_fill(state, 50)
    assert out.tolist() == ref
    assert state.tolist() == ref_state


def test_biquad_cascade_matches_scipy(kernels, rng):
    sos = signal.butter(2, [100, 1000], "bandpass", fs=16000, output="sos")
    sections = np.ascontiguousarray(np.column_stack([sos[:, :3], sos[:, 4:]]))
    x = rng.normal(size=3000)
    np.testing.assert_allclose(kernels.biquad_cascade(sections, x), signal.sosfilt(sos, x), atol=1e-12)


@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-9), (np.float32, 1e-4)])
def test_conv_forward_equals_loops(kernels, rng, dtype, tol):
    x = rng.normal(size=(2, 3, 6, 5)).astype(dtype)
    w = rng.normal(size=(4, 3, 3, 3)).astype(dtype)
    b = rng.normal(size=4).astype(dtype)
    out = kernels.conv2d_forward(x, w, b)
    assert out.dtype == dtype
    np.testing.assert_allclose(out, conv2d_loops(x, w, b), atol=tol)


def test_conv_backward_is_adjoint_of_forward(kernels, rng):
    x = rng.normal(size=(2, 3, 5, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    dout = rng.normal(size=(2, 4, 5, 6))
    dx, dw, db = kernels.conv2d_backward(x, w, dout)
    # forward is linear in x and in w, so <dout, conv(x)> exposes both gradients
    zero = np.zeros(4)
    np.testing.assert_allclose(np.sum(dx * x), np.sum(dout * kernels.conv2d_forward(x, w, zero)), rtol=1e-10)
    for _ in range(3):
        dw_dir = rng.normal(size=w.shape)
        lhs = np.sum(dout * kernels.conv2d_forward(x, dw_dir, zero))
        np.testing.assert_allclose(np.sum(dw * dw_dir), lhs, rtol=1e-10)
    np.testing.assert_allclose(db, dout.sum(axis=(0, 2, 3)), rtol=1e-12)


def test_maxpool_forward_backward(kernels):
    x = np.array([[[[1.0, 3.0, 2.0, 2.0],
                    [0.0, 3.0, 5.0, 1.0],
                    [-1.0, -2.0, 7.0, 7.0],
                    [-3.0, -4.0, 7.0, 7.0]]]])
    out, idx = kernels.maxpool2_forward(x)
    assert out[0, 0].tolist() == [[3.0, 5.0], [-1.0, 7.0]]
    # ties resolve to the first maximum in row-major window order
    assert idx[0, 0].tolist() == [[1, 2], [0, 0]]
    grad = kernels.maxpool2_backward(np.ones_like(out), idx)
    assert grad.sum() == 4
    assert grad[0, 0, 0, 1] == 1 and grad[0, 0, 1, 1] == 0 and grad[0, 0, 2, 2] == 1


@pytest.mark.skipif(NATIVE is None, reason="extension not built")
def test_native_and_fallback_agree(rng):
    from fdmsense._kernels import _fallback as py
    x = rng.normal(size=(3, 2, 8, 8)).astype(np.float32)
    w = rng.normal(size=(5, 2, 3, 3)).astype(np.float32)
    b = rng.normal(size=5).astype(np.float32)
    np.testing.assert_allclose(NATIVE.conv2d_forward(x, w, b), py.conv2d_forward(x, w, b), atol=1e-5)
    dout = rng.normal(size=(3, 5, 8, 8)).astype(np.float32)
    for a, c in zip(NATIVE.conv2d_backward(x, w, dout), py.conv2d_backward(x, w, dout)):
        np.testing.assert_allclose(a, c, atol=1e-4)
    out_n, idx_n = NATIVE.maxpool2_forward(x)
    out_p, idx_p = py.maxpool2_forward(x)
    assert np.array_equal(out_n, out_p) and np.array_equal(idx_n, idx_p)


def test_backend_selection_reports_name():
    assert _kernels.BACKEND_NAME in ("native", "python")
    assert _kernels.backend is (_kernels.native or _kernels.fallback)


@pytest.mark.skipif(NATIVE is None, reason="compiled extension not built")
def test_benchmark_script_runs_and_backends_agree(capsys):
    import importlib.util
    from pathlib import Path
    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    assert bench.main(["--quick", "--repeat", "1"]) == 0
    assert "conv2d_backward" in capsys.readouterr().out
