"""Deterministic 64-bit generator used for every randomized suite.

The generator is splitmix64 (Steele/Lea/Flood 2014): a single 64-bit counter
advanced by the golden-ratio increment 0x9E3779B97F4A7C15, with a two-round
xor-shift-multiply finalizer (0xBF58476D1CE4E5B9, 0x94D049BB133111EB).
It is trivially portable, so any reimplementation seeded with the same integer
reproduces the exact stream. All randomness in this project (property suites,
disturbance stress variants, QP instance generation) flows from one seed
through this class; nothing uses the global `random` or numpy default_rng.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1


class SplitMix64:
    """splitmix64 stream. `uniform` draws use the top 53 bits of each output."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * (2.0 ** -53)  # in [0, 1)
        return low + (high - low) * u

    def integer(self, low: int, high: int) -> int:
        """Uniform integer in [low, high] inclusive."""
        span = high - low + 1
        return low + self.next_u64() % span

    def spawn(self) -> "SplitMix64":
        """Child stream seeded from this one (for per-case substreams)."""
        return SplitMix64(self.next_u64())
