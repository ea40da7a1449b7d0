"""Deterministic random streams shared by every simulator backend.

A SplitMix64 generator with a fixed draw recipe: the compiled kernel
re-implements exactly these integer and floating-point operations, so a
rollout is bit-identical no matter which backend runs it.  Substreams are
derived with `derive_seed`, never by reusing a parent stream.
"""

from __future__ import annotations

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15

import math


def _scramble(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    return z ^ (z >> 31)


def derive_seed(root: int, *indices: int) -> int:
    """Stable child seed from a root seed and a tuple of stream indices."""
    s = root & MASK64
    for ix in indices:
        s = _scramble((s + GOLDEN * ((ix & MASK64) + 1)) & MASK64)
    return s


def fnv1a64(text: str) -> int:
    """FNV-1a hash of a string, for id-keyed seed derivation."""
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


class Rng:
    """SplitMix64 stream with uniform and Gaussian draws.

    Gaussian draws use a stateless two-draw Box-Muller (the second
    variate is discarded); uniforms map the top 53 bits into (0, 1].
    """

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return _scramble(self.state)

    def uniform(self) -> float:
        # (0, 1]: never 0, so log(uniform()) is always finite.
        return ((self.next_u64() >> 11) + 1) * (2.0 ** -53)

    def gaussian(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
