"""Small deterministic generators with fully specified output streams.

Both generators are defined bit-for-bit so that group orders, random
vertices and fixture weights can be reproduced by any implementation.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

# Knuth's MMIX multiplier/increment
LCG_MULTIPLIER = 6364136223846793005
LCG_INCREMENT = 1442695040888963407


class SplitMix64:
    """splitmix64 (Steele, Lea, Flood 2014).

    state += 0x9E3779B97F4A7C15, then the output is the state passed through
    two xor-shift-multiply rounds and a final xor-shift.
    """

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection (no modulo bias)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % bound

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n), swapping from the top down."""
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def bits(self, n: int) -> list[int]:
        """n fair bits, least significant bit of each 64-bit word first."""
        out: list[int] = []
        while len(out) < n:
            word = self.next_u64()
            out.extend((word >> b) & 1 for b in range(min(64, n - len(out))))
        return out


class LCG64:
    """64-bit linear congruential generator used for fixture weights.

    state' = state * 6364136223846793005 + 1442695040888963407 (mod 2**64).
    uniform() maps the top 53 bits of the new state to [0, 1).
    """

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state * LCG_MULTIPLIER + LCG_INCREMENT) & MASK64
        return self.state

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return low + (high - low) * u

    def uniforms(self, count: int, low: float = 0.0, high: float = 1.0) -> list[float]:
        return [self.uniform(low, high) for _ in range(count)]
