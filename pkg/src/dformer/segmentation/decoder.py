"""Lightweight decoder over the last three RGB stage outputs."""

from __future__ import annotations

import numpy as np

from ..core import ops
from ..core.init import Initializer
from ..core.nn import ConvBN, Linear, Module
from ..core.rng import Rng
from ..core.tensor import Tensor
from ..encoder.blocks import DualFeatures
from ..encoder.config import VariantConfig
from ..encoder.model import DFormerEncoder

NMF_EPS = 1e-6


def nmf_multiplicative(v: np.ndarray, bases: np.ndarray, steps: int, eps: float = NMF_EPS):
    """Multiplicative-update NMF of ``v`` [B, C, N] with initial ``bases`` [B, C, R].

    Returns (bases [B, C, R], coef [B, N, R]) with ``v ~ bases @ coef^T``.
    """
    vt = np.swapaxes(v, 1, 2)
    coef = vt @ bases + eps
    for _ in range(steps):
        coef = coef * (vt @ bases) / (coef @ (np.swapaxes(bases, 1, 2) @ bases) + eps)
        bases = bases * (v @ coef) / (bases @ (np.swapaxes(coef, 1, 2) @ coef) + eps)
    return bases, coef


class NMFContext(Module):
    """Global context from a low-rank non-negative factorization of the features.

    The factorization loop runs on detached values; gradients flow through one
    final coefficient update computed with the bases held fixed.
    """

    _buffers = ("bases_init",)

    def __init__(self, init: Initializer, name: str, dim: int, rank: int, steps: int):
        self.rank = rank
        self.steps = steps
        self.ham_in = Linear(init, f"{name}.ham_in", dim, dim)
        self.ham_out = Linear(init, f"{name}.ham_out", dim, dim)
        b = Rng(0).split(name, "bases").uniform(size=(dim, rank))
        self.bases_init = (b / np.linalg.norm(b, axis=0, keepdims=True)).astype(np.float32)
        # a fixed (bases, coef) pair replacing the solve; set by the gradient checker
        self._frozen = None

    def forward(self, x: Tensor) -> Tensor:
        B, C, h, w = x.shape
        v = ops.reshape(ops.softplus(self.ham_in(x)), (B, C, h * w))
        bases0 = np.broadcast_to(self.bases_init.astype(v.dtype), (B, C, self.rank))
        if self._frozen is not None:
            bases, coef = self._frozen
        else:
            bases, coef = nmf_multiplicative(v.data, bases0, self.steps)
        bt = np.swapaxes(bases, 1, 2)
        num = ops.matmul(ops.transpose(v, (0, 2, 1)), Tensor(bases, dtype=v.dtype))
        den = coef @ (bt @ bases) + NMF_EPS
        coef_t = ops.mul(num, Tensor(coef / den, dtype=v.dtype))
        recon = ops.matmul(Tensor(bases, dtype=v.dtype), ops.transpose(coef_t, (0, 2, 1)))
        y = self.ham_out(ops.reshape(recon, (B, C, h, w)))
        return ops.add(x, y)


class DecoderHead(Module):
    """Project stage 2-4 RGB maps to ``dim``, sum at 1/8, context, fuse, classify."""

    def __init__(self, init: Initializer, in_channels: tuple[int, int, int], dim: int, num_classes: int,
                 ham_rank: int = 64, ham_steps: int = 6, use_ham: bool = True, name: str = "decoder"):
        self.proj2 = Linear(init, f"{name}.proj2", in_channels[0], dim)
        self.proj3 = Linear(init, f"{name}.proj3", in_channels[1], dim)
        self.proj4 = Linear(init, f"{name}.proj4", in_channels[2], dim)
        if use_ham and ham_rank > 0:
            self.context = NMFContext(init, f"{name}.context", dim, ham_rank, ham_steps)
        else:
            self.context = None
        self.fuse = ConvBN(init, f"{name}.fuse", dim, dim, kernel=1)
        self.cls = Linear(init, f"{name}.cls", dim, num_classes)

    def forward(self, stage_feats: list[DualFeatures], out_size) -> Tensor:
        if len(stage_feats) != 3:
            raise ValueError(f"decoder expects the last three stages, got {len(stage_feats)}")
        target = stage_feats[0].spatial
        x = None
        for proj, f in zip((self.proj2, self.proj3, self.proj4), stage_feats):
            y = ops.bilinear_resize(proj(f.rgb), target)
            x = y if x is None else ops.add(x, y)
        if self.context is not None:
            x = self.context(x)
        logits = self.cls(self.fuse(x))
        return ops.bilinear_resize(logits, out_size)


class SegmentationModel(Module):
    """Encoder plus decoder; ``num_classes == 1`` gives a saliency head."""

    _flatten = ("encoder",)

    def __init__(self, cfg: VariantConfig, init: Initializer | None = None, num_classes: int | None = None):
        init = init or Initializer(0)
        self.cfg = cfg
        self.num_classes = cfg.num_classes if num_classes is None else num_classes
        self.encoder = DFormerEncoder(cfg, init)
        self.decoder = DecoderHead(init, cfg.rgb_channels[1:], cfg.decoder_dim, self.num_classes,
                                   cfg.ham_rank, cfg.ham_steps, cfg.use_ham)

    @property
    def saliency(self) -> bool:
        return self.num_classes == 1

    def forward(self, rgb: Tensor, depth: Tensor, rng: Rng | None = None) -> Tensor:
        feats = self.encoder(rgb, depth, rng)
        return self.decoder(feats[1:], rgb.shape[2:])
