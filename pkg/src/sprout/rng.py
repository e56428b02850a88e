"""Deterministic PCG32 random number generator.

Implements the minimal published PCG32 generator (64-bit LCG state advance,
XSH-RR output). The stream is reproducible bit-for-bit across platforms,
which is what every seeded component of the pipeline (splits, shuffles,
augmentation, dropout, weight init) builds on.

The default stream selector is 54, matching the published demo program, so
``Rng(42)`` emits the well-known reference sequence starting
``0xa15c02b7, 0x7b47f409, 0xba1d3330, ...``.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_MULT = 6364136223846793005
DEFAULT_STREAM = 54


def mix64(*parts: int) -> int:
    """SplitMix64-style scramble of integers into one 64-bit seed.

    Used to derive independent generator seeds from structured coordinates,
    e.g. (base seed, epoch, entry ordinal), without correlated streams."""
    x = 0
    for p in parts:
        x = (x ^ (p & _MASK64)) * 0x9E3779B97F4A7C15 & _MASK64
        x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
        x ^= x >> 31
    return x


class Rng:
    """PCG32 generator. Single-owner: never share one instance across threads."""

    __slots__ = ("seed", "stream", "state", "inc")

    def __init__(self, seed: int, stream: int = DEFAULT_STREAM):
        self.seed = seed & _MASK64
        self.stream = stream & _MASK64
        self.inc = ((self.stream << 1) | 1) & _MASK64
        self.state = 0
        self._advance()
        self.state = (self.state + self.seed) & _MASK64
        self._advance()

    def _advance(self):
        self.state = (self.state * _MULT + self.inc) & _MASK64

    def next_u32(self) -> int:
        """One generator step; returns a uniform 32-bit integer."""
        old = self.state
        self._advance()
        xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & 0xFFFFFFFF

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform float in [lo, hi), one generator step."""
        return lo + (self.next_u32() * 2.0**-32) * (hi - lo)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError(f"randbelow needs n >= 1, got {n}")
        limit = (1 << 32) - ((1 << 32) % n)
        while True:
            u = self.next_u32()
            if u < limit:
                return u % n

    def coin(self) -> bool:
        """Fair coin, one generator step."""
        return self.next_u32() < (1 << 31)

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randbelow(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def derive(self, salt: int) -> "Rng":
        """Independent child generator; deterministic in (seed, salt)."""
        return Rng((self.seed ^ salt) & _MASK64, self.stream)

    # Vectorized bulk draws. The LCG state at step i is
    # s_i = a^i * s_0 + c * (a^(i-1) + ... + 1), all mod 2^64, so a whole
    # block of states is computable with two uint64 prefix scans. Outputs
    # are bit-identical to repeated next_u32() calls.

    def fill_u32(self, n: int) -> np.ndarray:
        if n == 0:
            return np.empty(0, dtype=np.uint32)
        with np.errstate(over="ignore"):
            a = np.full(n, _MULT, dtype=np.uint64)
            a[0] = 1
            apow = np.multiply.accumulate(a)          # a^0 .. a^(n-1)
            geo = np.add.accumulate(apow)             # sum_{j<=i} a^j
            geo = np.concatenate(([np.uint64(0)], geo[:-1]))
            states = apow * np.uint64(self.state) + np.uint64(self.inc) * geo
            xorshifted = (((states >> np.uint64(18)) ^ states) >> np.uint64(27)).astype(
                np.uint32
            )
            rot = (states >> np.uint64(59)).astype(np.uint32)
            shift = (np.uint32(32) - rot) & np.uint32(31)
            out = (xorshifted >> rot) | (xorshifted << shift)
            # advance the scalar state past the block: s_n = a^n s_0 + c sum_{j<n} a^j
            apow_n = (int(apow[-1]) * _MULT) & _MASK64
            geo_n = (int(geo[-1]) + int(apow[-1])) & _MASK64
        self.state = (apow_n * self.state + self.inc * geo_n) & _MASK64
        return out

    def fill_uniform(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """n uniform float64 values in [lo, hi), matching repeated uniform()."""
        u = self.fill_u32(n).astype(np.float64) * 2.0**-32
        return lo + u * (hi - lo)
