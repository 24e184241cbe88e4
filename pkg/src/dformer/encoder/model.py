"""Dual-branch hierarchical encoder."""

from __future__ import annotations

import numpy as np

from ..core.init import Initializer
from ..core.nn import ConvBN, Module, ModuleList
from ..core.rng import Rng
from ..core.tensor import Tensor
from .blocks import DualFeatures, RGBDBlock
from .config import VariantConfig


class Stem(Module):
    """Two 3x3 stride-2 conv + BN + gelu layers: input resolution / 4."""

    def __init__(self, init: Initializer, name: str, c_in: int, c_out: int):
        mid = max(1, c_out // 2)
        self.conv1 = ConvBN(init, f"{name}.conv1", c_in, mid, 3, stride=2)
        self.conv2 = ConvBN(init, f"{name}.conv2", mid, c_out, 3, stride=2)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(self.conv1(x))


class DualConv(Module):
    """Independent conv + BN on each branch (downsampling or channel entry)."""

    def __init__(self, init: Initializer, name: str, c_in: tuple[int, int], c_out: tuple[int, int], stride: int):
        self.stride = stride
        self.rgb = ConvBN(init, f"{name}.rgb", c_in[0], c_out[0], 3, stride, act=False)
        self.depth = ConvBN(init, f"{name}.depth", c_in[1], c_out[1], 3, stride, act=False)

    def forward(self, f: DualFeatures) -> DualFeatures:
        h, w = f.spatial
        if self.stride == 2 and (h % 2 or w % 2):
            raise ValueError(f"downsampling needs even spatial dims, got {h}x{w}")
        return DualFeatures(self.rgb(f.rgb), self.depth(f.depth))


class Stage(Module):
    _flatten = ("blocks",)

    def __init__(self, init: Initializer, name: str, index: int, cfg: VariantConfig,
                 c_prev: tuple[int, int], dp_rates: list[float]):
        c = (cfg.rgb_channels[index], cfg.depth_channels[index])
        # stage 1 keeps the stem resolution and only changes width
        self.down = DualConv(init, f"{name}.down", c_prev, c, stride=1 if index == 0 else 2)
        self.blocks = ModuleList(
            [RGBDBlock(init, f"{name}.block{j + 1}", c[0], c[1], cfg.expansions[index], cfg.heads[index],
                       has_gaa=index > 0, pool_k=cfg.gaa_pool_k, lea_kernel=cfg.lea_kernel,
                       base_kernel=cfg.base_kernel, q_fusion=cfg.q_fusion, lea_fusion=cfg.lea_fusion,
                       drop_path_rate=dp_rates[j])
             for j in range(cfg.depths[index])],
            prefix="block")

    def forward(self, f: DualFeatures, rng: Rng, skip_blocks: bool = False) -> DualFeatures:
        f = self.down(f)
        if skip_blocks:
            return f
        for j, block in enumerate(self.blocks):
            f = block(f, rng.split(j))
        return f


def drop_path_rates(cfg: VariantConfig) -> list[list[float]]:
    """Linear ramp from 0 to ``drop_path_max`` over all blocks, split per stage."""
    total = sum(cfg.depths)
    ramp = np.linspace(0.0, cfg.drop_path_max, total) if total > 1 else np.zeros(1)
    out, i = [], 0
    for n in cfg.depths:
        out.append([float(r) for r in ramp[i:i + n]])
        i += n
    return out


class DFormerEncoder(Module):
    # parameter names read stage{i}.block{j}.{submodule}.{param}
    _flatten = ("stages",)

    def __init__(self, cfg: VariantConfig, init: Initializer | None = None):
        init = init or Initializer(0)
        self.cfg = cfg
        self.stem_rgb = Stem(init, "stem_rgb", 3, cfg.stem_channels[0])
        self.stem_depth = Stem(init, "stem_depth", cfg.depth_in_channels, cfg.stem_channels[1])
        rates = drop_path_rates(cfg)
        stages = []
        prev = cfg.stem_channels
        for i in range(4):
            stages.append(Stage(init, f"stage{i + 1}", i, cfg, prev, rates[i]))
            prev = (cfg.rgb_channels[i], cfg.depth_channels[i])
        self.stages = ModuleList(stages, prefix="stage")

    def stem(self, rgb: Tensor, depth: Tensor) -> DualFeatures:
        B, _, H, W = rgb.shape
        if H % 32 or W % 32:
            raise ValueError(f"input size must be divisible by 32, got {H}x{W}")
        if depth.shape[1] != self.cfg.depth_in_channels:
            raise ValueError(f"depth input has {depth.shape[1]} channels, config expects "
                             f"{self.cfg.depth_in_channels}")
        return DualFeatures(self.stem_rgb(rgb), self.stem_depth(depth))

    def blocks(self):
        return [b for s in self.stages for b in s.blocks]

    def forward(self, rgb: Tensor, depth: Tensor, rng: Rng | None = None,
                skip_blocks: bool = False) -> list[DualFeatures]:
        """Per-stage features at 1/4, 1/8, 1/16, 1/32 of the input size."""
        rng = rng or Rng(0)
        f = self.stem(rgb, depth)
        outs = []
        for i, stage in enumerate(self.stages):
            f = stage(f, rng.split("stage", i), skip_blocks)
            outs.append(f)
        return outs
