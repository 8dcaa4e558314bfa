"""Deterministic randomness primitives used everywhere in the pipeline.

Every stochastic choice in this package (few-shot sampling, token masking,
batch shuffling, mock backends) flows through SplitMix64 so that results are
reproducible from a single integer seed, independent of Python's hash
randomization or numpy versions.  The definitions below are the normative
spec for reproducing splits outside this codebase:

* SplitMix64 (Steele et al., public domain): state advances by the golden
  gamma 0x9E3779B97F4A7C15; output is the finalizer
  ``z ^= z>>30, z *= 0xBF58476D1CE4E5B9, z ^= z>>27,
  z *= 0x94D049BB133111EB, z ^= z>>31`` on the advanced state, all mod 2^64.
* Bounded draws use rejection sampling: draw 64-bit words until one falls
  below ``2^64 - (2^64 mod n)``, then reduce mod n (unbiased).
* Shuffles are Fisher-Yates from the top: for i = len-1 .. 1 swap element i
  with element ``below(i + 1)``.
* String-derived seeds use FNV-1a 64-bit over UTF-8 bytes.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class SplitMix64:
    """64-bit SplitMix generator with unbiased bounded draws and shuffling."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def next_float(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def shuffle(self, items: list) -> list:
        """In-place Fisher-Yates shuffle; returns the list for chaining."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample_indices(self, n: int, k: int) -> list[int]:
        """First k entries of a shuffled range(n); uniform k-subset in order drawn."""
        idx = self.shuffle(list(range(n)))
        return idx[:k]


def fnv1a64(data: str | bytes) -> int:
    """FNV-1a 64-bit hash, the string-to-seed function used for derivation."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & MASK64
    return h


def derive_seed(seed: int, *parts: object) -> int:
    """Derive an independent stream seed from a base seed and a tag path.

    The tag is the '/'-joined str() of ``parts``; the derived seed is one
    SplitMix64 output of ``seed XOR fnv1a64(tag)``.
    """
    tag = "/".join(str(p) for p in parts)
    return SplitMix64((seed ^ fnv1a64(tag)) & MASK64).next_u64()
