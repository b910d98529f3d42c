from __future__ import annotations

import numpy as np
import pytest


class MidpointRng:
    """Generator stand-in that removes all randomness.

    uniform() returns the interval midpoint (so symmetric jitters vanish
    and U(0.8, 1.2) scales become 1.0), standard_normal() returns zeros
    (so displacement fields vanish), integer draws return `int_value`.
    Only the Generator methods the library actually calls are provided.
    """

    def __init__(self, int_value: int = 0):
        self.int_value = int_value

    def uniform(self, low=0.0, high=1.0, size=None):
        mid = (low + high) / 2.0
        if size is None:
            return mid
        return np.full(size, mid)

    def integers(self, low, high=None, size=None):
        value = self.int_value
        if size is None:
            return value
        return np.full(size, value, dtype=np.int64)

    def standard_normal(self, size=None):
        if size is None:
            return 0.0
        return np.zeros(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        if size is None:
            return loc
        return np.full(size, loc)

    def permutation(self, n):
        return np.arange(n)

    def choice(self, n, p=None, size=None):
        if p is not None:
            return int(np.argmax(p))
        return 0

    def random(self, size=None):
        return self.uniform(size=size)


class ScriptedRng(MidpointRng):
    """MidpointRng with scripted queues for specific draw sequences.

    `uniforms` values are consumed by scalar uniform() calls in order
    (array draws still return midpoints); `ints` likewise for integers().
    Exhausted queues fall back to the midpoint/`int_value` behavior.
    """

    def __init__(self, uniforms=(), ints=(), int_value: int = 0):
        super().__init__(int_value=int_value)
        self.uniforms = list(uniforms)
        self.ints = list(ints)

    def uniform(self, low=0.0, high=1.0, size=None):
        if size is None and self.uniforms:
            return self.uniforms.pop(0)
        return super().uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        if size is None and self.ints:
            return int(self.ints.pop(0))
        return super().integers(low, high, size)


@pytest.fixture
def stub_rng():
    return MidpointRng()


def sphere_mask(shape, center, radius) -> np.ndarray:
    grid = np.indices(shape, dtype=np.float64)
    d2 = sum((grid[a] - center[a]) ** 2 for a in range(len(shape)))
    return d2 <= radius * radius


def disc_mask(shape, center, radius) -> np.ndarray:
    return sphere_mask(shape, center, radius)


@pytest.fixture
def small_blob():
    mask = np.zeros((12, 12, 12), dtype=bool)
    mask[3:9, 3:9, 3:9] = sphere_mask((6, 6, 6), (2.5, 2.5, 2.5), 2.8)
    return mask
