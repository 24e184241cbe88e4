"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, Tensor


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adamw_step(params, grads, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
               weight_decay: float | list[float] = 0.0) -> AdamState:
    """One in-place AdamW update; ``state.step`` counts completed updates.

    ``weight_decay`` may be a list giving one coefficient per parameter.
    """
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    wds = weight_decay if isinstance(weight_decay, (list, tuple)) else [weight_decay] * len(params)
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {getattr(p, 'name', i)}")
        d = p.data
        if wds[i]:
            d *= 1 - lr * wds[i]
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        d -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


@dataclass
class AdamW:
    params: list[Tensor]
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    no_decay: set = field(default_factory=set)

    def __post_init__(self):
        self.state = AdamState.zeros_like(self.params)
        self._wd = [0.0 if (p.ndim <= 1 or id(p) in self.no_decay) else self.weight_decay
                    for p in self.params]

    def step(self, lr: float | None = None) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adamw_step(self.params, grads, self.state, self.lr if lr is None else lr, self.betas,
                   self.eps, self._wd)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
