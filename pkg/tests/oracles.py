"""Independent reference implementations used as test oracles.

Nothing here imports the code it checks beyond the data types; each oracle
recomputes its quantity the slow, obvious way.
"""

from __future__ import annotations

import math

import numpy as np


# -- convolution ------------------------------------------------------------------

def conv2d_loops(x, w, b):
    """Same-padded 2-D cross-correlation with six explicit loops, float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    r = k // 2
    out = np.zeros((n, f, h, wd))
    for ni in range(n):
        for fi in range(f):
            for i in range(h):
                for j in range(wd):
                    acc = float(b[fi])
                    for ci in range(c):
                        for di in range(k):
                            for dj in range(k):
                                ii, jj = i + di - r, j + dj - r
                                if 0 <= ii < h and 0 <= jj < wd:
                                    acc += x[ni, ci, ii, jj] * w[fi, ci, di, dj]
                    out[ni, fi, i, j] = acc
    return out


# -- gradient check ---------------------------------------------------------------

def loss_and_pattern(cnn, model, x, y):
    """Mean cross-entropy plus the network's piecewise-linear region id
    (ReLU on/off masks and max-pool argmax indices)."""
    logits, cache = cnn._forward(model, x, keep=True)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(np.mean(logp[np.arange(len(y)), y]))
    pattern = tuple(np.asarray(a).tobytes() for a in (
        cache["z1"] > 0, cache["i1"], cache["z2"] > 0, cache["i2"], cache["z3"] > 0))
    return loss, pattern


def fd_gradient_check(cnn, model, x, y, eps=1e-5, floor=1e-6):
    """Central differences over every parameter of a float64 model.

    Components whose +eps/-eps perturbations land in different ReLU or
    max-pool regions are excluded: the loss is not differentiable across a
    kink, so a central difference there measures the kink, not the gradient.
    Returns (max relative error, checked count, skipped count).
    """
    _, grads = cnn.loss_and_grads(model, x, y)
    _, base_pattern = loss_and_pattern(cnn, model, x, y)
    worst, checked, skipped = 0.0, 0, 0
    for name, p in model.params.items():
        g = grads[name]
        for i in range(p.size):
            old = p.flat[i]
            p.flat[i] = old + eps
            lp, pat_p = loss_and_pattern(cnn, model, x, y)
            p.flat[i] = old - eps
            lm, pat_m = loss_and_pattern(cnn, model, x, y)
            p.flat[i] = old
            if pat_p != base_pattern or pat_m != base_pattern:
                skipped += 1
                continue
            fd = (lp - lm) / (2 * eps)
            a = float(g.flat[i])
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), floor))
            checked += 1
    return worst, checked, skipped


# -- mel --------------------------------------------------------------------------

def mel_matrix_loops(n_bins, bin_hz, n_mels, fmin, fmax):
    """HTK-mel triangles evaluated one (filter, bin) cell at a time."""
    def to_mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    lo, hi = to_mel(fmin), to_mel(fmax)
    edges = [to_hz(lo + (hi - lo) * i / (n_mels + 1)) for i in range(n_mels + 2)]
    m = np.zeros((n_mels, n_bins))
    for j in range(n_mels):
        left, centre, right = edges[j], edges[j + 1], edges[j + 2]
        # triangles narrower than a bin are widened to one bin each side
        half_l = max(centre - left, bin_hz)
        half_r = max(right - centre, bin_hz)
        for k in range(n_bins):
            f = k * bin_hz
            if centre - half_l < f <= centre:
                m[j, k] = (f - (centre - half_l)) / half_l
            elif centre < f < centre + half_r:
                m[j, k] = ((centre + half_r) - f) / half_r
    return m


# -- debounce ---------------------------------------------------------------------

def expected_alarms(seq, k):
    """Events implied by the debounce rules, derived from run boundaries.

    Raised: at the window where a run of one fault reaches length k.
    Cleared: the active alarm clears at the first window closing k
    consecutive windows without its fault, unless a new raise comes first.
    """
    raises = []
    run_fault, run_len = None, 0
    for i, f in enumerate(seq):
        if f is not None and f == run_fault:
            run_len += 1
        else:
            run_fault, run_len = f, (1 if f is not None else 0)
        if f is not None and run_len == k:
            raises.append((i, f))
    events = {i: ("raised", f) for i, f in raises}
    for n, (r, fault) in enumerate(raises):
        nxt = raises[n + 1][0] if n + 1 < len(raises) else len(seq)
        quiet = 0
        for j in range(r + 1, nxt):
            quiet = 0 if seq[j] == fault else quiet + 1
            if quiet == k:
                events[j] = ("cleared", fault)
                break
    return events
