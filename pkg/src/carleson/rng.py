"""SplitMix64: the single seeded generator behind every random fixture.

The algorithm is pinned here so corpora regenerate bit-identically on any
platform or interpreter version: the state advances by the odd constant
0x9E3779B97F4A7C15 and each output runs the finalizer

    z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27; z *= 0x94D049BB133111EB
    z ^= z >> 31

with all arithmetic mod 2**64.  ``below`` reduces by plain modulo; the tiny
bias is irrelevant for fixture generation and keeps the algorithm one line.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return (z ^ (z >> 31)) & _MASK

    def below(self, n: int) -> int:
        """Integer in [0, n)."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        return self.next_u64() % n

    def choice(self, seq):
        return seq[self.below(len(seq))]

    def spawn(self, salt: int) -> "SplitMix64":
        """Independent child stream, used to decouple corpus instances."""
        return SplitMix64(self.next_u64() ^ ((salt * _GAMMA) & _MASK))
