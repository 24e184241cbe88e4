"""Small module system on top of the primitives.

Modules discover their parameters, buffers and children from instance
attributes in definition order, which fixes parameter naming and ordering
(and therefore checkpoint layout and optimizer order) without registration
boilerplate.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .init import Initializer
from .rng import Rng
from .tensor import Parameter, Tensor


class Module:
    training: bool = True
    _buffers: tuple[str, ...] = ()
    # children whose names are not prefixed onto their parameters
    _flatten: tuple[str, ...] = ()

    def _prefix(self, prefix: str, name: str) -> str:
        return prefix if name in self._flatten else prefix + name + "."

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if not name.startswith("_"):
                yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self._children():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(self._prefix(prefix, name))

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(self._prefix(prefix, name))

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def to(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = np.array(p.data, dtype=dtype)
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {n: p.data for n, p in self.named_parameters()}
        out.update(self.named_buffers())
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy matching entries into this module; returns names that were loaded."""
        own = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        loaded = []
        for name, target in list(own.items()) + list(buffers.items()):
            if name not in state:
                if strict:
                    raise KeyError(f"checkpoint is missing {name}")
                continue
            src = state[name]
            tshape = target.data.shape if isinstance(target, Tensor) else target.shape
            if tuple(src.shape) != tuple(tshape):
                raise ValueError(f"shape mismatch for {name}: checkpoint {tuple(src.shape)} vs model {tuple(tshape)}")
            if isinstance(target, Tensor):
                target.data = np.array(src, dtype=target.data.dtype)
            else:
                target[...] = src
            loaded.append(name)
        return loaded

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    """Ordered children named ``{prefix}{index}`` with a 1-based index."""

    def __init__(self, modules, prefix: str = "", start: int = 1):
        self._items = list(modules)
        self._name_prefix = prefix
        self._start = start

    def _children(self):
        for i, m in enumerate(self._items):
            yield f"{self._name_prefix}{i + self._start}", m

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Conv2d(Module):
    def __init__(self, init: Initializer, name: str, c_in: int, c_out: int, kernel: int, stride: int = 1,
                 padding: int | None = None, groups: int = 1, bias: bool = True):
        if c_in % groups:
            raise ValueError(f"c_in={c_in} not divisible by groups={groups}")
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups
        self.weight = init.weight(f"{name}.weight", (c_out, c_in // groups, kernel, kernel))
        if bias:
            self.bias = init.constant(f"{name}.bias", (c_out,), 0.0)
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


def Linear(init: Initializer, name: str, c_in: int, c_out: int, bias: bool = True) -> Conv2d:
    """Per-pixel linear map on NCHW features (a 1x1 convolution)."""
    return Conv2d(init, name, c_in, c_out, 1, bias=bias)


def DWConv(init: Initializer, name: str, channels: int, kernel: int) -> Conv2d:
    if kernel % 2 == 0:
        raise ValueError(f"depthwise kernel must be odd, got {kernel}")
    return Conv2d(init, name, channels, channels, kernel, groups=channels)


class BatchNorm2d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, init: Initializer, name: str, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.weight = init.constant(f"{name}.weight", (channels,), 1.0)
        self.bias = init.constant(f"{name}.bias", (channels,), 0.0)
        self.running_mean = np.zeros(channels, np.float32)
        self.running_var = np.ones(channels, np.float32)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)


class ConvBN(Module):
    """Bias-free convolution, batch norm, optional gelu."""

    def __init__(self, init: Initializer, name: str, c_in: int, c_out: int, kernel: int = 3,
                 stride: int = 1, act: bool = True):
        self.conv = Conv2d(init, f"{name}.conv", c_in, c_out, kernel, stride, bias=False)
        self.bn = BatchNorm2d(init, f"{name}.bn", c_out)
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn(self.conv(x))
        return ops.gelu(y) if self.act else y


def drop_path(x: Tensor, rate: float, training: bool, rng: Rng | None) -> Tensor:
    """Zero whole samples of a residual branch with probability ``rate``.

    Survivors are rescaled by 1/(1 - rate); at rate 1 the branch is all zeros.
    """
    if not training or rate <= 0.0:
        return x
    B = x.shape[0]
    if rate >= 1.0:
        mask = np.zeros((B,) + (1,) * (x.ndim - 1), dtype=x.dtype)
    else:
        rng = rng or Rng(0)
        keep = (rng.random(B) >= rate).astype(x.dtype)
        mask = (keep / (1.0 - rate)).astype(x.dtype).reshape((B,) + (1,) * (x.ndim - 1))
    return ops.mul(x, Tensor(mask, dtype=x.dtype))
