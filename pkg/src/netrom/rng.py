"""Splittable deterministic random numbers.

Everything stochastic in this library (topology sampling, initial
conditions, weight initialization, mini-batch shuffling) draws from one
64-bit mix-based generator so that a run is a pure function of its master
seed.  The generator is SplitMix64: the state advances by a fixed odd
increment (the golden-ratio constant) and each output is a finalizing
avalanche mix of the state.  Independent streams are derived by mixing the
master seed with a stream index, never by sharing state.

Constants (Steele, Lea & Flood, "Fast splittable pseudorandom number
generators"):

    GAMMA = 0x9E3779B97F4A7C15
    MIX1  = 0xBF58476D1CE4E5B9
    MIX2  = 0x94D049BB133111EB
"""

from __future__ import annotations

import numpy as np

__all__ = ["SplitMix64", "child_seed"]

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def child_seed(master: int, stream: int) -> int:
    """Derive the seed of independent stream `stream` from a master seed.

    Defined as mix(master + (stream + 1) * GAMMA); streams derived from the
    same master never collide for stream indices below 2**64.
    """
    if stream < 0:
        raise ValueError("stream index must be non-negative")
    return _mix((master + (stream + 1) * _GAMMA) & _MASK)


class SplitMix64:
    """SplitMix64 stream with bulk (vectorized) draws.

    Bulk draws are bit-identical to the same number of sequential
    single-value draws: state after n draws is state0 + n*GAMMA, and each
    output depends only on its own state value.
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return _mix(self._state)

    def u64_array(self, n: int) -> np.ndarray:
        """n raw 64-bit outputs as uint64, advancing the state by n."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self._state) + steps * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        self._state = (self._state + n * _GAMMA) & _MASK
        return z

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * 2.0**-53
        return lo + (hi - lo) * u

    def uniform_array(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return lo + (hi - lo) * u

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        limit = _MASK + 1 - ((_MASK + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def choice(self, items):
        return items[self.randint(len(items))]

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) via stable argsort of raw draws."""
        return np.argsort(self.u64_array(n), kind="stable")

    def spawn(self, stream: int) -> "SplitMix64":
        return SplitMix64(child_seed(self._state, stream))
