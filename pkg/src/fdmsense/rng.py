"""Deterministic PRNG shared by model init, shuffling and the simulator.

xoshiro256** (Blackman & Vigna) seeded through splitmix64. Streams are split by
hashing a parent seed together with integer keys (``derive_seed``), so adding a
component to the simulator never shifts the draws of another component.

Derivation rule::

    h = seed
    for key in keys:
        h = splitmix64(h ^ (key * 0x9E3779B97F4A7C15 mod 2**64))
"""

from __future__ import annotations

import numpy as np

from . import _kernels

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 output for state ``x`` (after the golden-ratio increment)."""
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    h = seed & MASK64
    for key in keys:
        h = splitmix64(h ^ ((key * _GOLDEN) & MASK64))
    return h


class Xoshiro256:
    """xoshiro256** generator with a few numpy-returning helpers."""

    def __init__(self, seed: int):
        words = [splitmix64((seed + k * _GOLDEN) & MASK64) for k in range(4)]
        if not any(words):
            words[0] = 1
        self.state = np.array(words, dtype=np.uint64)

    def raw(self, n: int) -> np.ndarray:
        return _kernels.xoshiro_fill(self.state, int(n))

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return low + (high - low) * u

    def normal(self, n: int, scale: float = 1.0) -> np.ndarray:
        # Box-Muller on pairs; 1 - u keeps the log argument in (0, 1]
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log(1.0 - u[:m]))
        theta = 2.0 * np.pi * u[m:]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return scale * z

    def integers(self, n: int, high: int) -> np.ndarray:
        """``n`` integers in [0, high) by multiply-shift on the top 32 bits."""
        top = self.raw(n) >> np.uint64(32)
        return ((top * np.uint64(high)) >> np.uint64(32)).astype(np.int64)

    def random(self) -> float:
        return float(self.uniform(1)[0])

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniform(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(u[n - 1 - i] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm
