"""Seedable xorshift64* generator with a fixed, documented bitstream.

State is 64 bits, initialised from the user seed by one round of
splitmix64 (so seed 0 is valid).  Each draw:

    x ^= x >> 12
    x ^= x << 25   (mod 2**64)
    x ^= x >> 27
    out = x * 0x2545F4914F6CDD1D  (mod 2**64)

Floats in [0, 1) take the top 53 bits of ``out``.  Integers in
``[lo, hi]`` are ``lo + floor(u * (hi - lo + 1))`` with ``u`` a float draw.
Any language can reproduce scenes bit-for-bit from these rules.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_MULT = 0x2545F4914F6CDD1D


def splitmix64(seed: int) -> int:
    z = (seed + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class XorShift64Star:
    def __init__(self, seed: int):
        state = splitmix64(int(seed) & _MASK)
        # all-zero state is a fixed point of xorshift
        self.state = state or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK
        x ^= x >> 27
        self.state = x
        return (x * _MULT) & _MASK

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def randint(self, low: int, high: int) -> int:
        """Uniform integer in the closed range [low, high]."""
        if high < low:
            raise ValueError(f"empty range [{low}, {high}]")
        return low + int(self.random() * (high - low + 1))

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n), drawing from the top index down."""
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randint(0, i)
            items[i], items[j] = items[j], items[i]
        return items
