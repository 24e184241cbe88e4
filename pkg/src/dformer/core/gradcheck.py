"""Finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .rng import Rng
from .tensor import Tensor, current_tape, no_grad


class NondeterministicError(RuntimeError):
    pass


def grad_check(f: Callable[[], Tensor], inputs: Tensor | Sequence[Tensor], h: float = 1e-5,
               max_probes: int | None = 64, seed: int = 0) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` takes no arguments and closes over ``inputs``; it must return a scalar.
    For each input, every coordinate is probed when the tensor has at most
    ``max_probes`` entries, otherwise a seeded random subset of that size.
    Relative error is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    for x in inputs:
        if x.data.dtype != np.float64:
            raise TypeError("grad_check expects float64 inputs; build them under precision('f64')")
        if not (x.data.flags.c_contiguous and x.data.flags.writeable):
            x.data = x.data.copy()
        x.requires_grad = True
        x.grad = None

    current_tape().clear()
    out = f()
    base = float(out.data)
    current_tape().backward(out, inputs)
    analytic = [x.grad.copy() for x in inputs]
    with no_grad():
        again = float(f().data)
    if again != base:
        raise NondeterministicError(f"f is not deterministic: {base!r} vs {again!r}")

    rng = Rng(seed).split("grad_check")
    worst = 0.0
    with no_grad():
        for n, x in enumerate(inputs):
            flat = x.data.reshape(-1)
            size = flat.size
            if max_probes is None or size <= max_probes:
                idx = np.arange(size)
            else:
                idx = np.sort(rng.split(n).permutation(size)[:max_probes])
            ga = analytic[n].reshape(-1)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f().data)
                flat[i] = orig - h
                fm = float(f().data)
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                err = abs(ga[i] - num) / max(1e-8, abs(ga[i]) + abs(num))
                worst = max(worst, err)
    return worst
