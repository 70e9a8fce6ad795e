"""Seeded, counter-based random number generation.

Backed by numpy's Philox bit generator, whose stream depends only on the key
and counter, so identical seeds and call sequences give identical draws on
every platform.
"""

from __future__ import annotations

import hashlib
import math
from functools import lru_cache

import numpy as np


def stable_hash(*parts) -> int:
    """64-bit hash of ``parts`` that does not vary between processes."""
    text = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


class Rng:
    def __init__(self, seed: int = 0, _key: tuple = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._key = tuple(_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"Rng(seed={self.seed}, key={self._key})"

    def child(self, *names) -> "Rng":
        """Independent stream derived from this seed and ``names``."""
        return Rng(self.seed, self._key + tuple(stable_hash(n) for n in names))

    def random(self, shape=None, dtype=np.float64):
        if dtype not in (np.float32, np.float64):
            dtype = np.float64
        return self._gen.random(shape, dtype=dtype)

    def uniform(self, low, high, shape=None):
        return self._gen.uniform(low, high, shape)

    def normal(self, loc=0.0, scale=1.0, shape=None):
        return self._gen.normal(loc, scale, shape)

    def truncated_normal(self, std, shape, bound=2.0):
        """Draws with |v| <= bound * std whose distribution has standard
        deviation ``std``: a wider normal is cut at the bound (out-of-range
        draws are redrawn)."""
        scale = std * _widening(bound)
        out = self._gen.normal(0.0, scale, shape)
        limit = bound * std
        bad = np.abs(out) > limit
        while bad.any():
            out[bad] = self._gen.normal(0.0, scale, int(bad.sum()))
            bad = np.abs(out) > limit
        return out

    def integers(self, low, high=None, shape=None):
        return self._gen.integers(low, high, shape)

    def choice(self, n_or_seq, size=None, replace=True, p=None):
        return self._gen.choice(n_or_seq, size=size, replace=replace, p=p)

    def permutation(self, n):
        return self._gen.permutation(n)


def _cut_variance(a):
    """Variance of a standard normal truncated to [-a, a]."""
    pdf = math.exp(-a * a / 2) / math.sqrt(2 * math.pi)
    mass = math.erf(a / math.sqrt(2))
    return 1.0 - 2 * a * pdf / mass


@lru_cache(maxsize=None)
def _widening(bound):
    """Ratio scale/std so that N(0, scale) cut at bound*std has std ``std``.

    With a = bound*std/scale the condition is var(a) = (a/bound)^2; the left
    side minus the right is positive for small a and negative as a grows."""
    lo, hi = 1e-6, bound
    for _ in range(200):
        mid = (lo + hi) / 2
        if _cut_variance(mid) > (mid / bound) ** 2:
            lo = mid
        else:
            hi = mid
    return bound / ((lo + hi) / 2)
