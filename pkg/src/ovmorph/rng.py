"""Portable, splittable random streams.

All randomness in the package flows through PCG64 bit generators keyed by a
``SeedSequence(seed, spawn_key=...)``.  Only the raw 64-bit output of the bit
generator is consumed, and it is turned into bounded integers with plain
IEEE arithmetic, so results depend on neither the numpy ``Generator`` method
implementations nor the platform.
"""
from __future__ import annotations

import numpy as np

_INV_2_53 = 1.0 / 9007199254740992.0


def stream(seed: int, *key: int) -> np.random.PCG64:
    """Independent bit generator for ``(seed, key...)``."""
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in key))
    return np.random.PCG64(ss)


def derive_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def uniform53(bitgen: np.random.PCG64, size: int) -> np.ndarray:
    """``size`` doubles in [0, 1) built from the top 53 bits of raw draws."""
    raw = np.asarray(bitgen.random_raw(size), dtype=np.uint64)
    return (raw >> np.uint64(11)).astype(np.float64) * _INV_2_53


def integers(bitgen: np.random.PCG64, n: int, size: int) -> np.ndarray:
    """``size`` integers uniform on [0, n)."""
    out = np.floor(uniform53(bitgen, size) * n).astype(np.intp)
    return np.minimum(out, n - 1)


class PartialShuffle:
    """Forward Fisher-Yates over ``range(n)`` that is advanced on demand.

    ``take(k)`` fixes the next ``k`` positions of the permutation, so a caller
    can draw a few items and later extend the same permutation.
    """

    def __init__(self, bitgen: np.random.PCG64, n: int):
        self.bitgen = bitgen
        self.items = np.arange(n, dtype=np.intp)
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self.items) - self.pos

    def take(self, k: int) -> np.ndarray:
        n = len(self.items)
        k = min(k, n - self.pos)
        if k <= 0:
            return self.items[:0].copy()
        u = uniform53(self.bitgen, k)
        items = self.items
        for step in range(k):
            i = self.pos + step
            span = n - i
            j = i + min(int(u[step] * span), span - 1)
            items[i], items[j] = items[j], items[i]
        start = self.pos
        self.pos += k
        return items[start:self.pos].copy()


def permutation(bitgen: np.random.PCG64, n: int) -> np.ndarray:
    """Uniform random permutation of ``range(n)``."""
    return PartialShuffle(bitgen, n).take(n)
