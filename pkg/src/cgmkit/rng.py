"""Deterministic random streams.

Every random draw in the toolkit flows from one root seed. Independent
sub-streams are derived with string or integer tags, so parallel work items
(dataset samples, bootstrap replicates) get reproducible streams regardless
of execution order.
"""

import zlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8"))
    raise TypeError(f"stream tag must be int or str, got {type(tag).__name__}")


class Rng:
    """Counter-based random stream. Same seed and tags -> identical draws."""

    def __init__(self, seed: int, tags=()):
        self.seed = int(seed)
        self.tags = tuple(_tag_to_int(t) for t in tags)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.tags)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def derive(self, *tags) -> "Rng":
        """Independent sub-stream identified by extra tags."""
        return Rng(self.seed, self.tags + tuple(_tag_to_int(t) for t in tags))

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, shape=()) -> np.ndarray:
        return self._gen.random(shape)

    def integers(self, low, high, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
