"""Parameter initializers."""

from __future__ import annotations

import numpy as np

from .rng import Rng
from .tensor import Parameter, default_dtype

DEFAULT_INIT_STD = 0.02


def trunc_normal(dims, std: float, rng: Rng, dtype=None) -> np.ndarray:
    """Normal(0, std) samples truncated to [-2 std, 2 std] by resampling."""
    dims = tuple(int(d) for d in dims)
    if any(d <= 0 for d in dims):
        raise ValueError(f"dims must be positive, got {dims}")
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    z = rng.normal(dims)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return (z * std).astype(dtype or default_dtype())


def init_trunc_normal(dims, std: float, rng: Rng) -> Parameter:
    return Parameter(trunc_normal(dims, std, rng))


class Initializer:
    """Creates parameter arrays from a per-name random stream."""

    def __init__(self, rng: Rng | int = 0, std: float = DEFAULT_INIT_STD):
        self.rng = rng if isinstance(rng, Rng) else Rng(rng)
        self.std = std

    def weight(self, name: str, shape) -> Parameter:
        return Parameter(trunc_normal(shape, self.std, self.rng.split(name)), name=name)

    def constant(self, name: str, shape, value: float) -> Parameter:
        return Parameter(np.full(shape, value, dtype=default_dtype()), name=name)


class MetaInitializer(Initializer):
    """Shape-only parameters backed by zero-stride views; used for counting."""

    def __init__(self):
        super().__init__(0)

    def weight(self, name, shape):
        return Parameter(np.broadcast_to(np.zeros((), default_dtype()), tuple(shape)), name=name)

    def constant(self, name, shape, value):
        return self.weight(name, shape)
