# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: biquad cascade, xoshiro256**, 2-D convolution, 2x2 max-pool."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, uint8_t

cnp.import_array()

ctypedef fused real:
    float
    double


def biquad_cascade(const double[:, ::1] sections, const double[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t n_sec = sections.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, s
    cdef double b0, b1, b2, a1, a2, z1, z2, v, y
    for i in range(n):
        out[i] = x[i]
    for s in range(n_sec):
        b0 = sections[s, 0]
        b1 = sections[s, 1]
        b2 = sections[s, 2]
        a1 = sections[s, 3]
        a2 = sections[s, 4]
        z1 = 0.0
        z2 = 0.0
        for i in range(n):
            v = out[i]
            y = b0 * v + z1
            z1 = b1 * v - a1 * y + z2
            z2 = b2 * v - a2 * y
            out[i] = y
    return out_arr


cdef inline uint64_t _rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))


def xoshiro_fill(uint64_t[::1] state, Py_ssize_t n):
    """Draw ``n`` raw outputs, advancing ``state`` (4 words) in place."""
    out_arr = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] out = out_arr
    cdef uint64_t s0 = state[0], s1 = state[1], s2 = state[2], s3 = state[3]
    cdef uint64_t t
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = _rotl(s1 * 5, 7) * 9
            t = s1 << 17
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return out_arr


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w, real[::1] b):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t F = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t p = K // 2
    out_arr = np.empty((N, F, H, W), dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, f, c, ky, kx, y, iy, ox, lo, hi, shift
    cdef real wv, bv
    with nogil:
        for n in range(N):
            for f in range(F):
                bv = b[f]
                for y in range(H):
                    for ox in range(W):
                        out[n, f, y, ox] = bv
                for c in range(C):
                    for ky in range(K):
                        for kx in range(K):
                            wv = w[f, c, ky, kx]
                            shift = kx - p
                            lo = 0 if shift >= 0 else -shift
                            hi = W - shift if shift > 0 else W
                            for y in range(H):
                                iy = y + ky - p
                                if iy < 0 or iy >= H:
                                    continue
                                for ox in range(lo, hi):
                                    out[n, f, y, ox] += wv * x[n, c, iy, ox + shift]
    return out_arr


def conv2d_backward(real[:, :, :, ::1] x, real[:, :, :, ::1] w, real[:, :, :, ::1] dout):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t F = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t p = K // 2
    dt = np.float32 if real is float else np.float64
    dx_arr = np.zeros((N, C, H, W), dtype=dt)
    dw_arr = np.zeros((F, C, K, K), dtype=dt)
    db_arr = np.zeros(F, dtype=dt)
    row_arr = np.empty(W, dtype=dt)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef real[:, :, :, ::1] dw = dw_arr
    cdef real[::1] db = db_arr
    # per-column partial sums keep the inner loops free of scalar reductions
    cdef real[::1] row = row_arr
    cdef Py_ssize_t n, f, c, ky, kx, y, iy, ox, lo, hi, shift
    cdef real wv, acc
    with nogil:
        for n in range(N):
            for f in range(F):
                for ox in range(W):
                    row[ox] = 0
                for y in range(H):
                    for ox in range(W):
                        row[ox] += dout[n, f, y, ox]
                acc = 0
                for ox in range(W):
                    acc = acc + row[ox]
                db[f] += acc
                for c in range(C):
                    for ky in range(K):
                        for kx in range(K):
                            wv = w[f, c, ky, kx]
                            shift = kx - p
                            lo = 0 if shift >= 0 else -shift
                            hi = W - shift if shift > 0 else W
                            for ox in range(W):
                                row[ox] = 0
                            for y in range(H):
                                iy = y + ky - p
                                if iy < 0 or iy >= H:
                                    continue
                                for ox in range(lo, hi):
                                    row[ox] += dout[n, f, y, ox] * x[n, c, iy, ox + shift]
                                for ox in range(lo, hi):
                                    dx[n, c, iy, ox + shift] += wv * dout[n, f, y, ox]
                            acc = 0
                            for ox in range(lo, hi):
                                acc = acc + row[ox]
                            dw[f, c, ky, kx] += acc
    return dx_arr, dw_arr, db_arr


def maxpool2_forward(real[:, :, :, ::1] x):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = H // 2, Wo = W // 2
    out_arr = np.empty((N, C, Ho, Wo), dtype=np.float32 if real is float else np.float64)
    idx_arr = np.empty((N, C, Ho, Wo), dtype=np.uint8)
    cdef real[:, :, :, ::1] out = out_arr
    cdef uint8_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, c, i, j
    cdef real best, v
    cdef uint8_t k
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        # first maximum in row-major window order wins
                        best = x[n, c, 2 * i, 2 * j]
                        k = 0
                        v = x[n, c, 2 * i, 2 * j + 1]
                        if v > best:
                            best = v
                            k = 1
                        v = x[n, c, 2 * i + 1, 2 * j]
                        if v > best:
                            best = v
                            k = 2
                        v = x[n, c, 2 * i + 1, 2 * j + 1]
                        if v > best:
                            best = v
                            k = 3
                        out[n, c, i, j] = best
                        idx[n, c, i, j] = k
    return out_arr, idx_arr


def maxpool2_backward(real[:, :, :, ::1] dout, const uint8_t[:, :, :, ::1] idx):
    cdef Py_ssize_t N = dout.shape[0], C = dout.shape[1], Ho = dout.shape[2], Wo = dout.shape[3]
    dx_arr = np.zeros((N, C, 2 * Ho, 2 * Wo), dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, c, i, j
    cdef uint8_t k
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        k = idx[n, c, i, j]
                        dx[n, c, 2 * i + (k >> 1), 2 * j + (k & 1)] = dout[n, c, i, j]
    return dx_arr
