"""Deterministic, splittable random streams.

Streams are counter-based (Philox 4x64) and keyed by the pair
``(seed, stream)``, so any component can open an independent stream without
coordinating draw order with the rest of the program.  The same key always
reproduces the same draw sequence; nothing here depends on global state.

Stream ids used by the harness are fixed constants below so that reports and
fixtures are reproducible across entry points.
"""

from __future__ import annotations

import numpy as np

STREAM_INIT = 0
STREAM_DATA = 1
STREAM_TRAIN = 2
STREAM_SAMPLE = 3

_MASK = 0xFFFFFFFFFFFFFFFF
_MIX = 0x9E3779B97F4A7C15  # splitmix64 increment, used for child keys


def _mix64(a: int, b: int) -> int:
    x = ((a ^ (b * _MIX)) + _MIX) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return (x ^ (x >> 31)) & _MASK


class Rng:
    """One deterministic stream; identical (seed, stream) => identical draws."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, child: int) -> "Rng":
        """Derive an independent stream; deterministic in (stream, child)."""
        return Rng(self.seed, _mix64(self.stream, child))

    def normal(self, shape=(), scale: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(size=shape) * scale

    def uniform(self, shape=()) -> np.ndarray:
        return self._gen.random(size=shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray | int:
        """Uniform integers in [low, high), numpy convention."""
        out = self._gen.integers(low, high, size=shape)
        return int(out) if shape is None else out

    def choice(self, n: int) -> int:
        return self.integers(0, n)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"
