"""Counter-based, splittable random streams.

A stream is identified by its root seed plus a path of integer or string keys,
so the draws of any component depend only on that path and never on how many
other components drew before it.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    return int(k) & 0xFFFFFFFF


class Rng:
    def __init__(self, seed: int = 0, path: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(path)
        self._gen: np.random.Generator | None = None

    def split(self, *keys) -> "Rng":
        return Rng(self.seed, self.path + tuple(_key(k) for k in keys))

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def normal(self, size, dtype=np.float64) -> np.ndarray:
        return self.generator.standard_normal(size).astype(dtype, copy=False)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def random(self, size=None):
        return self.generator.random(size)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"
