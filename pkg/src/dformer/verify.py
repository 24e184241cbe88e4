"""Finite-difference verification of every primitive and of a small full model.

All checks run in float64. Each returns the max relative error over its
probes; the suite passes when every error is below ``GRADCHECK_TOL``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ops
from .core.gradcheck import grad_check
from .core.init import Initializer
from .core.rng import Rng
from .core.tensor import Tensor, precision

GRADCHECK_TOL = 1e-5
PRIMITIVE_TOL = 1e-6
# larger weights than the training default keep every parameter's gradient
# well above finite-difference round-off
MODEL_CHECK_STD = 0.2


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tol


def _readout(y: Tensor, rng: Rng) -> Callable[[Tensor], Tensor]:
    """A random linear functional: sum(y * R) with R fixed."""
    r = Tensor(rng.normal(y.shape, np.float64))
    return lambda out: ops.sum(ops.mul(out, r))


def _check(op, make_inputs, rng: Rng, **kw) -> float:
    xs = make_inputs(rng.split("x"))
    read = _readout(op(*xs), rng.split("r"))
    return grad_check(lambda: read(op(*xs)), [x for x in xs if isinstance(x, Tensor)], **kw)


def _t(rng: Rng, shape, low=None, high=None) -> Tensor:
    if low is None:
        return Tensor(rng.normal(shape, np.float64))
    return Tensor(rng.uniform(low, high, size=shape))


def _dims(rng: Rng, n: int, lo: int = 1, hi: int = 5) -> tuple[int, ...]:
    return tuple(int(v) for v in rng.integers(lo, hi + 1, size=n))


def primitive_cases(n_shapes: int = 5):
    """(name, callable(rng) -> max error) pairs, each covering ``n_shapes`` random shapes."""

    def unary(op, low=None, high=None):
        return lambda r: _check(op, lambda g: [_t(g, _dims(g, 3), low, high)], r)

    def binary(op, low=None, high=None):
        def run(r):
            shp = _dims(r.split("s"), 3)
            # second operand is broadcast along the first axis
            return _check(op, lambda g: [_t(g.split(0), shp), _t(g.split(1), (1,) + shp[1:], low, high)], r)
        return run

    def conv(kind):
        def run(r):
            g = r.split("shape")
            B, h, w = int(g.integers(1, 3)), int(g.integers(4, 8)), int(g.integers(4, 8))
            if kind == "dw":
                c = int(g.integers(1, 5))
                k = (3, 5, 7)[int(g.integers(0, 3))]
                args = (c, c, k, 1, c)
            elif kind == "pw":
                args = (int(g.integers(1, 5)), int(g.integers(1, 5)), 1, 1, 1)
            elif kind == "grouped":
                gr = int(g.integers(2, 4))
                args = (gr * int(g.integers(1, 3)), gr * int(g.integers(1, 3)), 3, 1, gr)
            else:
                args = (int(g.integers(1, 4)), int(g.integers(1, 4)), 3, 1 + (kind == "strided"), 1)
            cin, cout, k, stride, groups = args

            def make(gg):
                return [_t(gg.split(0), (B, cin, h, w)), _t(gg.split(1), (cout, cin // groups, k, k)),
                        _t(gg.split(2), (cout,))]
            return _check(lambda x, wt, b: ops.conv2d(x, wt, b, stride, k // 2, groups), make, r)
        return run

    def pool(r):
        g = r.split("shape")
        shp = (1, 2, int(g.integers(3, 10)), int(g.integers(3, 10)))
        k = int(g.integers(1, 5))
        return _check(lambda x: ops.adaptive_avg_pool2d(x, k), lambda gg: [_t(gg, shp)], r)

    def resize(r):
        g = r.split("shape")
        shp = (1, 2, int(g.integers(2, 7)), int(g.integers(2, 7)))
        out = (int(g.integers(1, 12)), int(g.integers(1, 12)))
        return _check(lambda x: ops.bilinear_resize(x, out), lambda gg: [_t(gg, shp)], r)

    def matmul(r):
        g = r.split("shape")
        b, m, k, n = _dims(g, 4)
        return _check(ops.matmul, lambda gg: [_t(gg.split(0), (b, m, k)), _t(gg.split(1), (b, k, n))], r)

    def reduce(op):
        def run(r):
            shp = _dims(r.split("s"), 3, 2, 4)
            ax = int(r.split("a").integers(0, 3))
            return _check(lambda x: op(x, axis=ax, keepdims=True), lambda g: [_t(g, shp)], r)
        return run

    def shape_op(kind):
        def run(r):
            shp = _dims(r.split("s"), 3, 2, 4)
            if kind == "reshape":
                f = lambda x: ops.reshape(x, (shp[0], -1))
            elif kind == "transpose":
                f = lambda x: ops.transpose(x, (2, 0, 1))
            elif kind == "flip":
                f = lambda x: ops.flip(x, -1)
            else:
                f = lambda x, y: ops.concat([x, y], axis=1)
                return _check(f, lambda g: [_t(g.split(0), shp), _t(g.split(1), (shp[0], 3, shp[2]))], r)
            return _check(f, lambda g: [_t(g, shp)], r)
        return run

    def hadamard(r):
        shp = _dims(r.split("s"), 4)
        return _check(ops.hadamard, lambda g: [_t(g.split(0), shp), _t(g.split(1), shp)], r)

    def softmaxes(op):
        return lambda r: _check(lambda x: op(x, axis=1), lambda g: [_t(g, _dims(g.split("s"), 3, 2, 5))], r)

    def ce(r):
        g = r.split("shape")
        B, C, h = int(g.integers(1, 4)), int(g.integers(2, 6)), int(g.integers(1, 4))
        tgt = g.integers(0, C, size=(B, h, 1))
        if B * h > 1:
            tgt[0, 0, 0] = 255
        eps = float(g.uniform(0, 0.3))
        return _check(lambda x: ops.cross_entropy(x, tgt, eps, ignore_index=255),
                      lambda gg: [_t(gg, (B, C, h, 1))], r)

    def bce(r):
        g = r.split("shape")
        shp = (int(g.integers(1, 3)), 1, int(g.integers(2, 5)), int(g.integers(2, 5)))
        y = g.integers(0, 2, size=shp)
        mask = g.random(shp) > 0.2
        mask.flat[0] = True
        return _check(lambda x: ops.binary_cross_entropy_with_logits(x, y, mask),
                      lambda gg: [_t(gg, shp)], r)

    def bn(training):
        def run(r):
            g = r.split("shape")
            B, C, h, w = int(g.integers(2, 4)), int(g.integers(1, 4)), int(g.integers(1, 4)), int(g.integers(2, 4))
            rm = g.normal(size=C)
            rv = g.uniform(0.5, 2.0, size=C)

            def f(x, gamma, beta):
                # fresh copies: train mode updates the running statistics in place
                return ops.batch_norm(x, gamma, beta, rm.copy(), rv.copy(), training)
            return _check(f, lambda gg: [_t(gg.split(0), (B, C, h, w)), _t(gg.split(1), (C,)),
                                         _t(gg.split(2), (C,))], r)
        return run

    cases = [
        ("add", binary(ops.add)), ("sub", binary(ops.sub)), ("mul", binary(ops.mul)),
        ("div", binary(ops.div, 0.5, 2.0)), ("neg", unary(ops.neg)), ("exp", unary(ops.exp)),
        ("log", unary(ops.log, 0.2, 3.0)), ("sigmoid", unary(ops.sigmoid)), ("softplus", unary(ops.softplus)),
        ("gelu", unary(ops.gelu)), ("hadamard", hadamard), ("sum", reduce(ops.sum)), ("mean", reduce(ops.mean)),
        ("reshape", shape_op("reshape")), ("transpose", shape_op("transpose")), ("flip", shape_op("flip")),
        ("concat", shape_op("concat")), ("matmul", matmul), ("conv2d", conv("dense")),
        ("conv2d_stride2", conv("strided")), ("conv2d_1x1", conv("pw")), ("conv2d_depthwise", conv("dw")),
        ("conv2d_grouped", conv("grouped")), ("adaptive_avg_pool2d", pool), ("bilinear_resize", resize),
        ("softmax", softmaxes(ops.softmax)), ("log_softmax", softmaxes(ops.log_softmax)),
        ("cross_entropy", ce), ("bce_with_logits", bce), ("batch_norm_train", bn(True)),
        ("batch_norm_eval", bn(False)),
    ]

    def repeat(fn):
        return lambda rng: max(fn(rng.split(i)) for i in range(n_shapes))

    return [(name, repeat(fn)) for name, fn in cases]


def _tiny_model(seed: int, use_ham: bool):
    from .encoder.config import get_variant
    from .segmentation.decoder import SegmentationModel
    cfg = get_variant("tiny-test", use_ham=use_ham)
    model = SegmentationModel(cfg, Initializer(Rng(seed).split("init"), MODEL_CHECK_STD))
    model.to(np.float64)
    # non-trivial stored statistics so the eval-mode normalization is exercised
    g = Rng(seed).split("bn").generator
    for name, buf in model.named_buffers():
        if name.endswith("running_mean"):
            buf[...] = g.normal(0, 0.1, buf.shape)
        elif name.endswith("running_var"):
            buf[...] = g.uniform(0.5, 1.5, buf.shape)
    return model.eval()


def check_block(seed: int = 0, probes: int = 8) -> float:
    """One stage-2 style RGB-D block (with GAA), every parameter and both inputs."""
    from .encoder.blocks import DualFeatures, RGBDBlock
    init = Initializer(Rng(seed).split("block"), MODEL_CHECK_STD)
    block = RGBDBlock(init, "block", 8, 4, 4, 1, has_gaa=True, pool_k=3, lea_kernel=3, base_kernel=3)
    block.to(np.float64)
    block.eval()
    rng = Rng(seed).split("data")
    rgb, dep = _t(rng.split(0), (2, 8, 6, 6)), _t(rng.split(1), (2, 4, 6, 6))
    out = block(DualFeatures(rgb, dep))
    r1, r2 = Tensor(rng.split(2).normal(out.rgb.shape)), Tensor(rng.split(3).normal(out.depth.shape))

    def f():
        o = block(DualFeatures(rgb, dep))
        return ops.add(ops.sum(ops.mul(o.rgb, r1)), ops.sum(ops.mul(o.depth, r2)))
    return grad_check(f, [rgb, dep] + block.parameters(), max_probes=probes, seed=seed)


def check_full_model(seed: int = 0, probes: int = 4, size: int = 32) -> float:
    """Tiny encoder (one block per stage) plus decoder without the factorization context."""
    model = _tiny_model(seed, use_ham=False)
    rng = Rng(seed).split("data")
    rgb, dep = _t(rng.split(0), (2, 3, size, size)), _t(rng.split(1), (2, 1, size, size))
    read = _readout(model(rgb, dep), rng.split("r"))
    return grad_check(lambda: read(model(rgb, dep)), [rgb, dep] + model.parameters(),
                      max_probes=probes, seed=seed)


def check_context(seed: int = 0, probes: int = 16) -> float:
    """The factorization context with its iterative solve held fixed.

    The multiplicative loop is treated as a constant at backward time, so the
    finite-difference reference freezes the loop's output at the base point.
    """
    from .segmentation.decoder import NMFContext, nmf_multiplicative
    ctx = NMFContext(Initializer(Rng(seed).split("ctx"), MODEL_CHECK_STD), "ctx", 6, 3, 4)
    ctx.to(np.float64)
    x = _t(Rng(seed).split("x"), (2, 6, 4, 4))
    v = ops.softplus(ctx.ham_in(x)).data.reshape(2, 6, 16)
    ctx._frozen = nmf_multiplicative(v, np.broadcast_to(ctx.bases_init.astype(np.float64), (2, 6, 3)), 4)
    read = _readout(ctx(x), Rng(seed).split("r"))
    try:
        return grad_check(lambda: read(ctx(x)), [x] + ctx.parameters(), max_probes=probes, seed=seed)
    finally:
        ctx._frozen = None


def run_suite(seed: int = 0, n_shapes: int = 5, include_model: bool = True, log=None) -> list[CheckResult]:
    results = []
    with precision("f64"):
        for name, fn in primitive_cases(n_shapes):
            results.append(CheckResult(name, fn(Rng(seed).split(name)), PRIMITIVE_TOL))
            if log:
                log(results[-1])
        if include_model:
            for name, fn in (("rgbd_block", check_block), ("nmf_context_fixed_solve", check_context),
                             ("tiny_encoder_decoder", check_full_model)):
                results.append(CheckResult(name, fn(seed), GRADCHECK_TOL))
                if log:
                    log(results[-1])
    return results
