"""Differentiable primitives over :class:`Tensor`.

Feature maps are NCHW. Each primitive computes its forward value with numpy
and registers a closure that maps the output gradient to input gradients.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, add_macs, as_tensor, record

# tanh-approximation constants for gelu: sqrt(2/pi) and the cubic coefficient
GELU_C = 0.7978845608
GELU_A = 0.044715


def _t(x) -> Tensor:
    return as_tensor(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    # python scalars take the dtype of the tensor operand
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(b, Tensor) and isinstance(a, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return _t(a), _t(b)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return record(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two tensors with identical dims."""
    if a.shape != b.shape:
        raise ValueError(f"hadamard needs identical dims, got {a.shape} and {b.shape}")
    return mul(a, b)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return record(out, (a, b), lambda g: (g / bd, -g * out / bd), "div")


def neg(a: Tensor) -> Tensor:
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return record(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return record(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    ad = a.data
    out = np.logaddexp(0, ad).astype(ad.dtype)
    return record(out, (a,), lambda g: (g * _sigmoid(ad),), "softplus")


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU: 0.5 x (1 + tanh(c (x + a x^3)))."""
    x = a.data
    inner = GELU_C * (x + GELU_A * x**3)
    th = np.tanh(inner)
    out = 0.5 * x * (1 + th)

    def backward(g):
        dinner = GELU_C * (1 + 3 * GELU_A * x**2)
        return (g * (0.5 * (1 + th) + 0.5 * x * (1 - th**2) * dinner),)

    return record(out, (a,), backward, "gelu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1 + ex)
    return out


# ---------------------------------------------------------------- reductions / shape


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return record(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum(a, axes, keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def flip(a: Tensor, axis: int = -1) -> Tensor:
    return record(np.flip(a.data, axis).copy(), (a,), lambda g: (np.flip(g, axis),), "flip")


def concat(tensors, axis: int = 1) -> Tensor:
    """Stack tensors along ``axis`` in argument order."""
    tensors = [_t(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ValueError(f"concat dims mismatch: {ref} vs {t.shape} (axis {axis})")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return tuple(out)

    return record(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def concat_channels(tensors) -> Tensor:
    return concat(tensors, axis=1)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product, batched over leading dims."""
    a, b = _t(a), _t(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul dim mismatch: {a.shape} @ {b.shape}")
    out = ad @ bd
    add_macs(out.size * ad.shape[-1])

    def backward(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return record(out, (a, b), backward, "matmul")


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation over NCHW input with OIkk weights."""
    B, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    if C % groups or O % groups or Cg != C // groups:
        raise ValueError(f"invalid group split: input C={C}, weight {w.shape}, groups={groups}")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ValueError(f"conv output would be empty for input {x.shape} and kernel {kh}x{kw}")
    add_macs(B * O * Ho * Wo * Cg * kh * kw)
    xd, wd = x.data, w.data
    inputs = (x, w) if bias is None else (x, w, bias)

    if kh == kw == 1 and stride == 1 and padding == 0 and groups == 1:
        w2 = wd[:, :, 0, 0]
        out = np.einsum("oc,bchw->bohw", w2, xd, optimize=True)
        if bias is not None:
            out = out + bias.data[None, :, None, None]

        def backward(g):
            gx = np.einsum("oc,bohw->bchw", w2, g, optimize=True)
            gw = np.einsum("bohw,bchw->oc", g, xd, optimize=True)[:, :, None, None]
            return (gx, gw) + ((g.sum(axis=(0, 2, 3)),) if bias is not None else ())

        return record(out, inputs, backward, "conv2d")

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    hs = stride * (Ho - 1) + 1
    ws = stride * (Wo - 1) + 1

    def window(arr, i, j):
        return arr[:, :, i:i + hs:stride, j:j + ws:stride]

    depthwise = groups == C and O == C and Cg == 1
    if depthwise:
        out = np.zeros((B, C, Ho, Wo), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                out += window(xp, i, j) * wd[None, :, 0, i, j, None, None]
    else:
        out = np.zeros((B, O, Ho, Wo), dtype=xd.dtype)
        og = O // groups
        for gi in range(groups):
            cs, os_ = slice(gi * Cg, (gi + 1) * Cg), slice(gi * og, (gi + 1) * og)
            acc = np.zeros((B, Ho, Wo, og), dtype=xd.dtype)
            for i in range(kh):
                for j in range(kw):
                    acc += np.tensordot(window(xp[:, cs], i, j), wd[os_, :, i, j], axes=([1], [1]))
            out[:, os_] = acc.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        if depthwise:
            for i in range(kh):
                for j in range(kw):
                    gw[:, 0, i, j] = np.einsum("bchw,bchw->c", g, window(xp, i, j))
                    window(gxp, i, j)[...] += g * wd[None, :, 0, i, j, None, None]
        else:
            og = O // groups
            for gi in range(groups):
                cs, os_ = slice(gi * Cg, (gi + 1) * Cg), slice(gi * og, (gi + 1) * og)
                gg = g[:, os_]
                for i in range(kh):
                    for j in range(kw):
                        xs = window(xp[:, cs], i, j)
                        gw[os_, :, i, j] = np.tensordot(gg, xs, axes=([0, 2, 3], [0, 2, 3]))
                        window(gxp[:, cs], i, j)[...] += np.einsum("oc,bohw->bchw", wd[os_, :, i, j], gg,
                                                                    optimize=True)
        gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        return (gx, gw) + ((g.sum(axis=(0, 2, 3)),) if bias is not None else ())

    return record(out, inputs, backward, "conv2d")


# ---------------------------------------------------------------- resampling


def adaptive_pool_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row i averages input cells [floor(i*n_in/n_out), ceil((i+1)*n_in/n_out))."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Half-pixel-center bilinear interpolation weights, edges clamped."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == n_out:
        np.fill_diagonal(m, 1.0)
        return m
    for t in range(n_out):
        s = (t + 0.5) * n_in / n_out - 0.5
        s = min(max(s, 0.0), n_in - 1.0)
        i0 = int(math.floor(s))
        i1 = min(i0 + 1, n_in - 1)
        frac = s - i0
        m[t, i0] += 1.0 - frac
        m[t, i1] += frac
    return m


def _separable(x: Tensor, mh: np.ndarray, mw: np.ndarray, what: str) -> Tensor:
    mh = mh.astype(x.dtype)
    mw = mw.astype(x.dtype)
    out = np.einsum("ih,bchw,jw->bcij", mh, x.data, mw, optimize=True)

    def backward(g):
        return (np.einsum("ih,bcij,jw->bchw", mh, g, mw, optimize=True),)

    return record(out, (x,), backward, what)


def adaptive_avg_pool2d(x: Tensor, out_size) -> Tensor:
    kh, kw = (out_size, out_size) if isinstance(out_size, int) else out_size
    if kh < 1 or kw < 1:
        raise ValueError(f"pool size must be >= 1, got {out_size}")
    _, _, H, W = x.shape
    return _separable(x, adaptive_pool_matrix(H, kh), adaptive_pool_matrix(W, kw), "adaptive_avg_pool2d")


def bilinear_resize(x: Tensor, out_size) -> Tensor:
    oh, ow = (out_size, out_size) if isinstance(out_size, int) else out_size
    if oh < 1 or ow < 1:
        raise ValueError(f"resize target must be >= 1, got {out_size}")
    _, _, H, W = x.shape
    if (oh, ow) == (H, W):
        return x
    return _separable(x, bilinear_matrix(H, oh), bilinear_matrix(W, ow), "bilinear_resize")


# ---------------------------------------------------------------- softmax family


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return record(out, (x,), backward, "log_softmax")


def cross_entropy(logits: Tensor, targets, label_smoothing: float = 0.0,
                  ignore_index: int | None = None) -> Tensor:
    """Mean label-smoothed negative log-likelihood over non-ignored positions.

    ``logits`` is [B, C] or [B, C, h, w]; ``targets`` holds class ids shaped like
    ``logits`` without the class axis.
    """
    x = logits.data
    C = x.shape[1]
    t = np.asarray(targets).astype(np.int64)
    if t.shape != x.shape[:1] + x.shape[2:]:
        raise ValueError(f"targets shape {t.shape} does not match logits {x.shape}")
    valid = np.ones(t.shape, bool) if ignore_index is None else t != ignore_index
    n = int(valid.sum())
    if n == 0:
        raise ValueError("cross_entropy: every position is ignored")
    if np.any((t[valid] < 0) | (t[valid] >= C)):
        raise ValueError(f"targets must lie in [0, {C}) or equal ignore_index")
    tt = np.where(valid, t, 0)
    z = x - x.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    eps = label_smoothing
    nll = -np.take_along_axis(logp, tt[:, None], axis=1)[:, 0]
    smooth = -logp.sum(axis=1) / C
    per = (1 - eps) * nll + eps * smooth
    loss = np.asarray((per * valid).sum() / n, dtype=x.dtype)

    def backward(g):
        target_dist = np.full_like(x, eps / C)
        np.put_along_axis(target_dist, tt[:, None], (1 - eps) + eps / C, axis=1)
        grad = (np.exp(logp) - target_dist) * (valid[:, None] / n)
        return (grad * g,)

    return record(loss, (logits,), backward, "cross_entropy")


def binary_cross_entropy_with_logits(logits: Tensor, targets, valid=None) -> Tensor:
    """Mean BCE over positions where ``valid`` (default: everywhere) is true."""
    z = logits.data
    y = np.asarray(targets, dtype=z.dtype).reshape(z.shape)
    w = np.ones_like(z) if valid is None else np.asarray(valid, dtype=z.dtype).reshape(z.shape)
    n = float(w.sum())
    if n == 0:
        raise ValueError("binary_cross_entropy_with_logits: every position is masked")
    loss = np.asarray(((np.logaddexp(0, z) - y * z) * w).sum() / n, dtype=z.dtype)
    return record(loss, (logits,), lambda g: ((_sigmoid(z) - y) * w * (g / n),), "bce_with_logits")


# ---------------------------------------------------------------- normalization


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (B, h, w).

    In training mode the running statistics are updated in place with
    ``running = (1 - momentum) * running + momentum * batch`` (unbiased variance).
    """
    xd = x.data
    B, C, H, W = xd.shape
    g_ = gamma.data[None, :, None, None]
    if training:
        m = B * H * W
        if m < 2:
            raise ValueError("batch_norm in train mode needs more than one value per channel")
        mu = xd.mean(axis=(0, 2, 3), keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        out = g_ * xhat + beta.data[None, :, None, None]
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(C)
        running_var *= 1 - momentum
        running_var += momentum * var.reshape(C) * (m / (m - 1))

        def backward(g):
            gxhat = g * g_
            gx = inv * (gxhat - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))
    else:
        rm = running_mean.astype(xd.dtype)[None, :, None, None]
        inv = (1.0 / np.sqrt(running_var.astype(xd.dtype) + eps))[None, :, None, None]
        xhat = (xd - rm) * inv
        out = g_ * xhat + beta.data[None, :, None, None]

        def backward(g):
            return g * g_ * inv, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return record(out.astype(xd.dtype, copy=False), (x, gamma, beta), backward, "batch_norm")
