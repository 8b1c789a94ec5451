"""Deterministic random numbers on a documented 64-bit splitmix generator.

Every stochastic choice in the package (mask shuffles, dataset splits, weight
init, augmentation draws) goes through this module so that runs are bitwise
reproducible across platforms and implementations.  The generator is the
standard splitmix64: the state advances by the golden-gamma constant and each
output is a finalizing mix of the state.  Because the state after k draws is
just ``seed + k*gamma``, blocks of draws can be produced vectorized without
changing the sequence.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _mix_vec(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps mod 2^64, matching _mix exactly
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *streams: int) -> int:
    """Fold stream indices into a base seed, one mix round per index.

    Gives (epoch, item) pairs and named substreams their own independent
    generators without correlation between neighbours.
    """
    z = seed & _MASK64
    for s in streams:
        z = _mix((z + _GAMMA * ((s & _MASK64) + 1)) & _MASK64)
    return z


class SplitMix64:
    """Sequential splitmix64 stream with vectorized block draws."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        return _mix(self.state)

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def next_floats(self, n: int) -> np.ndarray:
        """Block of n uniforms, identical to n successive next_float calls."""
        ks = np.arange(1, n + 1, dtype=np.uint64)
        states = np.uint64(self.state) + ks * np.uint64(_GAMMA)
        self.state = (self.state + n * _GAMMA) & _MASK64
        u = _mix_vec(states) >> np.uint64(11)
        return u.astype(np.float64) * (1.0 / (1 << 53))

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError(f"n must be positive, got {n}")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        idx = list(range(n))
        self.shuffle(idx)
        return idx

    def normal(self) -> float:
        """Standard normal via Box-Muller (consumes two uniforms)."""
        u1 = self.next_float()
        u2 = self.next_float()
        while u1 == 0.0:
            u1 = self.next_float()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def truncated_normal(self, shape, std: float = 0.02, clip: float = 2.0) -> np.ndarray:
        """Normal(0, std) resampled until within clip standard deviations."""
        n = int(np.prod(shape))
        chunks: list[np.ndarray] = []
        have = 0
        while have < n:
            m = max(64, int((n - have) * 1.4))
            u = self.next_floats(2 * m)
            u1, u2 = u[:m], u[m:]
            u1 = np.where(u1 == 0.0, 0.5, u1)  # log(0) guard; prob ~2^-53
            z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
            z = z[np.abs(z) <= clip]
            chunks.append(z)
            have += z.size
        out = np.concatenate(chunks)[:n] * std
        return out.reshape(shape)
