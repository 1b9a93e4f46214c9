"""Deterministic random streams built on splitmix64.

One generator family serves both synthetic data generation and model weight
initialization, so fixtures and initial weights are reproducible from a single
integer seed. The generator runs in counter mode: the i-th output is
``mix64(seed + (i + 1) * GOLDEN)``, which vectorizes cleanly with numpy uint64
arithmetic.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4B9C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_TWO_POW_NEG53 = 2.0 ** -53


def mix64(z: int) -> int:
    """splitmix64 finalizer on a plain Python integer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


def derive_seed(seed: int, *tags: int | str) -> int:
    """Derive an independent stream seed from a base seed and tags.

    Tags may be strings (parameter names, stage labels) or integers (sample
    or fold indices). The derivation is order sensitive.
    """
    z = mix64(seed)
    for tag in tags:
        t = fnv1a64(tag) if isinstance(tag, str) else mix64(int(tag) + 0x51ED2701)
        z = mix64(z ^ t)
    return z


class SplitMix64:
    """Counter-mode splitmix64 stream with vectorized draws."""

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & _MASK)
        self._count = 0

    def _raw(self, n: int) -> np.ndarray:
        counters = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        z = self._seed + counters * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers in [0, bound), via 53-bit floats (bound << 2**53)."""
        return np.floor(self.uniform(n) * bound).astype(np.int64)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1)."""
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_POW_NEG53

    def uniform_open(self, n: int) -> np.ndarray:
        """n doubles in (0, 1]."""
        return ((self._raw(n) >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_POW_NEG53

    def bits(self, n: int) -> np.ndarray:
        """n fair bits as int64 {0, 1}."""
        return (self._raw(n) >> np.uint64(63)).astype(np.int64)

    def normal(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller."""
        m = (n + 1) // 2
        u1 = self.uniform_open(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * m, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def truncated_normal(self, n: int, sigma: float, clip: float = 2.0) -> np.ndarray:
        """n draws from N(0, sigma^2) rejection-truncated at +/- clip*sigma."""
        kept: list[np.ndarray] = []
        have = 0
        while have < n:
            chunk = self.normal(max(16, int((n - have) * 1.3)))
            chunk = chunk[np.abs(chunk) <= clip]
            kept.append(chunk)
            have += chunk.size
        return np.concatenate(kept)[:n] * sigma

    def shuffle(self, n: int) -> np.ndarray:
        """A permutation of range(n) via Fisher-Yates."""
        perm = np.arange(n)
        draws = self.uniform(n)
        for i in range(n - 1, 0, -1):
            j = int(draws[n - 1 - i] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm
