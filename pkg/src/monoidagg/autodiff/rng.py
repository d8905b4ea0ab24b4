"""Deterministic pseudo-random generator (xoshiro256**).

All randomness in the package flows through :class:`Prng` so that any run is
reproducible from (seed, stream) alone, independent of Python's global RNG
state or numpy's.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15

ALGORITHM = "xoshiro256**"


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + _SPLITMIX_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Prng:
    """xoshiro256** generator with 4x64-bit state and an explicit stream id.

    Identical (seed, stream) pairs always produce identical sequences.
    """

    __slots__ = ("seed", "stream", "_s", "_gauss_spare")

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        # Mix seed and stream through splitmix64 to fill the state; a zero
        # state is unreachable this way.
        acc = (self.seed & _MASK64) ^ ((self.stream & _MASK64) * _SPLITMIX_GAMMA & _MASK64)
        words = []
        for _ in range(4):
            acc, w = _splitmix64(acc)
            words.append(w)
        self._s = words
        self._gauss_spare: float | None = None

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randint(self, low: int, high: int) -> int:
        """Uniform integer in the inclusive range [low, high]."""
        if high < low:
            raise ValueError(f"randint: empty range [{low}, {high}]")
        span = high - low + 1
        # Rejection sampling to avoid modulo bias.
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % span)
        while True:
            u = self.next_u64()
            if u < limit:
                return low + (u % span)

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        """Gaussian sample via Box-Muller (pairs cached)."""
        if self._gauss_spare is not None:
            z = self._gauss_spare
            self._gauss_spare = None
            return mu + sigma * z
        u1 = 1.0 - self.uniform()  # in (0, 1], keeps log finite
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._gauss_spare = r * math.sin(theta)
        return mu + sigma * r * math.cos(theta)

    def shuffle(self, xs: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(xs) - 1, 0, -1):
            j = self.randint(0, i)
            xs[i], xs[j] = xs[j], xs[i]

    def permutation(self, n: int) -> list[int]:
        idx = list(range(n))
        self.shuffle(idx)
        return idx

    def choice(self, xs: list):
        return xs[self.randint(0, len(xs) - 1)]

    def uniform_list(self, n: int, low: float = 0.0, high: float = 1.0) -> list[float]:
        span = high - low
        return [low + span * self.uniform() for _ in range(n)]

    def spawn(self, stream: int) -> "Prng":
        """Independent generator for the same seed on another stream."""
        return Prng(self.seed, stream)
