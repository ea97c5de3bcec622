"""Pure Python / numpy versions of the compiled kernels.

Same signatures and semantics as ``_native``. The biquad and xoshiro loops are
inherently sequential, so they run as plain Python loops here; the convolution
uses an im2col formulation instead of direct loops.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_MASK64 = (1 << 64) - 1


def biquad_cascade(sections, x):
    out = [float(v) for v in x]
    for b0, b1, b2, a1, a2 in np.asarray(sections, dtype=np.float64).tolist():
        z1 = z2 = 0.0
        for i, v in enumerate(out):
            y = b0 * v + z1
            z1 = b1 * v - a1 * y + z2
            z2 = b2 * v - a2 * y
            out[i] = y
    return np.asarray(out, dtype=np.float64)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK64


def xoshiro_fill(state, n):
    """Draw ``n`` raw outputs, advancing ``state`` (4 words) in place."""
    s0, s1, s2, s3 = (int(v) for v in state)
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3
    return out


def _cols(x, k):
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N,C,H,W,k,k
    n, c, h, w = x.shape
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)


def conv2d_forward(x, w, b):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    out = _cols(x, k) @ w.reshape(f, -1).T + b
    return np.ascontiguousarray(out.reshape(n, h, wd, f).transpose(0, 3, 1, 2))


def conv2d_backward(x, w, dout):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    p = k // 2
    g = dout.transpose(0, 2, 3, 1).reshape(n * h * wd, f)
    dw = (g.T @ _cols(x, k)).reshape(w.shape)
    db = dout.sum(axis=(0, 2, 3))
    dcols = (g @ w.reshape(f, -1)).reshape(n, h, wd, c, k, k)
    dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            dxp[:, :, ky:ky + h, kx:kx + wd] += dcols[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
    dx = np.ascontiguousarray(dxp[:, :, p:p + h, p:p + wd])
    return dx, dw.astype(x.dtype, copy=False), db.astype(x.dtype, copy=False)


def maxpool2_forward(x):
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(blocks, axis=-1).astype(np.uint8)  # argmax keeps the first maximum
    out = np.take_along_axis(blocks, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_backward(dout, idx):
    n, c, ho, wo = dout.shape
    onehot = np.arange(4, dtype=np.uint8) == idx[..., None]
    blocks = onehot * dout[..., None]
    dx = blocks.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx.reshape(n, c, 2 * ho, 2 * wo)).astype(dout.dtype, copy=False)
