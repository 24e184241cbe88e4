"""Tensor value type and the gradient tape.

Every differentiable primitive in :mod:`dformer.core.ops` produces its output
through :func:`record`, which appends a node to the tape of the current thread
when gradients are enabled. Nodes are appended in execution order, so the tape
is topologically sorted by construction and :meth:`Tape.backward` only has to
walk it in reverse.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

_DTYPES = {"f32": np.float32, "f64": np.float64}


class NonFiniteError(FloatingPointError):
    """A forward or backward value contained NaN or Inf."""


class _State(threading.local):
    def __init__(self) -> None:
        self.grad_enabled = True
        self.dtype = np.float32
        self.tape: Tape | None = None
        self.macs: list[int] | None = None


_state = _State()


def default_dtype() -> type:
    return _state.dtype


@contextlib.contextmanager
def precision(mode: str) -> Iterator[None]:
    """Set the dtype used for newly created tensors ("f32" or "f64")."""
    if mode not in _DTYPES:
        raise ValueError(f"unknown precision {mode!r}, expected one of {sorted(_DTYPES)}")
    prev = _state.dtype
    _state.dtype = _DTYPES[mode]
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def grad_enabled() -> bool:
    return _state.grad_enabled


@contextlib.contextmanager
def count_macs() -> Iterator[list[int]]:
    """Accumulate multiply-accumulate counts of conv/matmul calls into ``box[0]``."""
    prev = _state.macs
    box = [0]
    _state.macs = box
    try:
        yield box
    finally:
        _state.macs = prev


def add_macs(n: int) -> None:
    if _state.macs is not None:
        _state.macs[0] += int(n)


def check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {what}")


class Tensor:
    """An n-dimensional real array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(default_dtype())
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        current_tape().backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; the primitives live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis, keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)


class Parameter(Tensor):
    """A leaf tensor that always requires a gradient."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Ordered record of primitive applications on one thread."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self.nodes.append(_Node(out, inputs, backward))

    def clear(self) -> None:
        self.nodes.clear()

    def backward(self, loss: Tensor, params: Sequence[Tensor] | None = None) -> None:
        """Accumulate d(loss)/d(t) into ``t.grad`` for every recorded input.

        Leaves listed in ``params`` that the loss does not depend on get a zero
        gradient. The tape is cleared afterwards.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if params is not None:
            for p in params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
        loss.grad = np.ones_like(loss.data)
        try:
            for node in reversed(self.nodes):
                g = node.out.grad
                if g is None:
                    continue
                grads = node.backward(g)
                for t, gi in zip(node.inputs, grads):
                    if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                        continue
                    gi = unbroadcast(np.asarray(gi, dtype=t.data.dtype), t.shape)
                    t.grad = gi if t.grad is None else t.grad + gi
                if node.out is not loss:
                    node.out.grad = None
            for p in params or ():
                check_finite(p.grad, "backward")
        finally:
            self.clear()


def current_tape() -> Tape:
    if _state.tape is None:
        _state.tape = Tape()
    return _state.tape


@contextlib.contextmanager
def use_tape(tape: Tape) -> Iterator[Tape]:
    prev = _state.tape
    _state.tape = tape
    try:
        yield tape
    finally:
        _state.tape = prev


def backward(loss: Tensor, tape: Tape | None = None, params: Sequence[Tensor] | None = None) -> None:
    (tape or current_tape()).backward(loss, params)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=default_dtype()))


def record(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable, what: str) -> Tensor:
    check_finite(out_data, what)
    out = Tensor(out_data, dtype=out_data.dtype)
    if _state.grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        current_tape().record(out, inputs, backward_fn)
    return out
