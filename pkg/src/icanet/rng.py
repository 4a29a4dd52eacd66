"""SplitMix64 generator.

Integer-only state path so streams agree bit-for-bit across platforms. Reals
are taken from the top 53 bits: ``(z >> 11) * 2**-53`` in [0, 1).
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK = (1 << 64) - 1
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK
        return mix(self.state)

    def next_float(self) -> float:
        return (self.next_u64() >> 11) * 2.0 ** -53

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi] by modulo reduction (bias is irrelevant here)."""
        return lo + self.next_u64() % (hi - lo + 1)

    def floats(self, n: int) -> np.ndarray:
        """Next ``n`` reals as a float64 array; advances the state by ``n``."""
        out = uniform_stream(self.state, n)
        self.state = (self.state + n * GAMMA) & MASK
        return out


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def uniform_stream(state: int, n: int, chunk: int = 1 << 22) -> np.ndarray:
    """Vectorized equivalent of ``n`` calls to ``next_float`` from ``state``."""
    out = np.empty(n, dtype=np.float64)
    state &= MASK
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        base = (state + start * GAMMA) & MASK
        # uint64 array arithmetic wraps modulo 2**64
        k = np.arange(1, m + 1, dtype=np.uint64)
        z = k * np.uint64(GAMMA) + np.uint64(base)
        z = _mix_array(z)
        out[start:start + m] = (z >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return out
