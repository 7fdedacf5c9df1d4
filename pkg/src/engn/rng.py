"""Deterministic 64-bit random numbers.

The generator is SplitMix64 (Steele, Lea and Flood 2014).  Besides the
sequential stream, :func:`keyed_uniform` gives counter-based draws keyed by
``(seed, stream, flow, stage)`` so a sample never depends on how many
other samples were taken before it.  The numba simulation core carries a
copy of the same arithmetic; tests check that both agree.
"""

import math

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# stream salts: think/service draws and open-mode arrivals
STREAM_FLOW = 0x5EED0001
STREAM_ARRIVAL = 0x5EED0002


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def to_unit(bits: int) -> float:
    """Map 64 random bits to a float in (0, 1]."""
    return ((bits >> 11) + 1) * (1.0 / 9007199254740992.0)


def keyed_uniform(seed: int, stream: int, flow: int, stage: int) -> float:
    h = mix64((seed & MASK64) ^ mix64(stream))
    h = mix64(h ^ mix64(flow + GOLDEN))
    h = mix64(h ^ mix64(stage + 2 * GOLDEN))
    return to_unit(h)


class SplitMix64:
    """Sequential SplitMix64 stream with a splittable substream helper."""

    def __init__(self, seed: int = 0):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def uniform(self) -> float:
        return to_unit(self.next_u64())

    def split(self, *keys) -> "SplitMix64":
        h = self.state
        for k in keys:
            h = mix64(h ^ mix64(int(k) & MASK64))
        return SplitMix64(h)


def exponential_from_uniform(u: float, rate: float) -> float:
    return -math.log(u) / rate
