"""Seeded random streams with labeled forking.

``Rng(seed).fork("noise")`` always yields the same stream regardless of what
other forks were drawn from, so toggling one component never shifts another's
randomness.
"""

from __future__ import annotations

import zlib

import numpy as np


class Rng:
    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = int(seed)
        self.path = tuple(path)
        key = [zlib.crc32(label.encode("utf-8")) for label in self.path]
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=key)))

    def fork(self, *labels: str) -> Rng:
        return Rng(self.seed, self.path + tuple(str(label) for label in labels))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={'/'.join(self.path) or '<root>'})"

    # thin pass-throughs used across the package
    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size=size)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self.generator.uniform(low, high, size=size)

    def random(self, size=None):
        return self.generator.random(size)

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)
