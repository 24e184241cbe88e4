"""The RGB-D building block and its attention modules."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..core import ops
from ..core.init import Initializer
from ..core.nn import DWConv, BatchNorm2d, Linear, Module, drop_path
from ..core.rng import Rng
from ..core.tensor import Tensor


@dataclass
class DualFeatures:
    rgb: Tensor
    depth: Tensor

    def __post_init__(self):
        r, d = self.rgb.shape, self.depth.shape
        if r[0] != d[0] or r[2:] != d[2:]:
            raise ValueError(f"rgb {r} and depth {d} must share batch and spatial dims")

    @property
    def spatial(self) -> tuple[int, int]:
        return self.rgb.shape[2], self.rgb.shape[3]


class GAA(Module):
    """Global awareness attention.

    ``k*k`` pooled query tokens built from the concatenated RGB and depth maps
    attend over all ``h*w`` RGB key/value tokens; the ``k x k`` result is
    resized back to ``h x w`` and projected.
    """

    def __init__(self, init: Initializer, name: str, c_rgb: int, c_d: int, heads: int, pool_k: int,
                 q_fusion: str = "q"):
        if c_d % heads:
            raise ValueError(f"heads={heads} must divide C_d={c_d}")
        self.heads = heads
        self.pool_k = pool_k
        self.q_fusion = q_fusion
        q_in = c_rgb if q_fusion == "none" else c_rgb + c_d
        kv_in = c_rgb + c_d if q_fusion == "qkv" else c_rgb
        self.q = Linear(init, f"{name}.q", q_in, c_d)
        # a key bias shifts every logit of a query equally, so softmax ignores it
        self.k = Linear(init, f"{name}.k", kv_in, c_d, bias=False)
        self.v = Linear(init, f"{name}.v", kv_in, c_d)
        self.proj = Linear(init, f"{name}.proj", c_d, c_d)

    def attention(self, rgb: Tensor, depth: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (attention weights [B, heads, k*k, h*w], merged output [B, C_d, k, k])."""
        B, _, h, w = rgb.shape
        kk = self.pool_k
        both = ops.concat([rgb, depth], axis=1)
        q_src = rgb if self.q_fusion == "none" else both
        kv_src = both if self.q_fusion == "qkv" else rgb
        q = self.q(ops.adaptive_avg_pool2d(q_src, kk))
        k = self.k(kv_src)
        v = self.v(kv_src)
        c = q.shape[1]
        nh, dh = self.heads, c // self.heads
        q = ops.transpose(ops.reshape(q, (B, nh, dh, kk * kk)), (0, 1, 3, 2))
        k = ops.reshape(k, (B, nh, dh, h * w))
        v = ops.transpose(ops.reshape(v, (B, nh, dh, h * w)), (0, 1, 3, 2))
        attn = ops.softmax(ops.mul(ops.matmul(q, k), 1.0 / math.sqrt(dh)), axis=-1)
        o = ops.matmul(attn, v)
        o = ops.reshape(ops.transpose(o, (0, 1, 3, 2)), (B, c, kk, kk))
        return attn, o

    def forward(self, rgb: Tensor, depth: Tensor) -> Tensor:
        _, o = self.attention(rgb, depth)
        return self.proj(ops.bilinear_resize(o, rgb.shape[2:]))


class LEA(Module):
    """Local enhancement attention: large-kernel depth gates on RGB features."""

    def __init__(self, init: Initializer, name: str, c_rgb: int, c_d: int, kernel: int, fusion: str = "hadamard"):
        if fusion not in ("hadamard", "add", "concat"):
            raise ValueError(f"unknown LEA fusion {fusion!r}")
        self.fusion = fusion
        self.depth_lin = Linear(init, f"{name}.depth_lin", c_d, c_d)
        self.dwconv = DWConv(init, f"{name}.dwconv", c_d, kernel)
        self.rgb_lin = Linear(init, f"{name}.rgb_lin", c_rgb, c_d)
        if fusion == "concat":
            self.fuse = Linear(init, f"{name}.fuse", 2 * c_d, c_d)

    def forward(self, rgb: Tensor, depth: Tensor) -> Tensor:
        gate = self.dwconv(self.depth_lin(depth))
        value = self.rgb_lin(rgb)
        if self.fusion == "hadamard":
            return ops.hadamard(gate, value)
        if self.fusion == "add":
            return ops.add(gate, value)
        return self.fuse(ops.concat([gate, value], axis=1))


class BaseModule(Module):
    """RGB-only gating: DWConv(Linear(x)) * Linear(x)."""

    def __init__(self, init: Initializer, name: str, c_rgb: int, kernel: int):
        self.lin = Linear(init, f"{name}.lin", c_rgb, c_rgb)
        self.dwconv = DWConv(init, f"{name}.dwconv", c_rgb, kernel)
        self.gate_lin = Linear(init, f"{name}.gate_lin", c_rgb, c_rgb)

    def forward(self, rgb: Tensor) -> Tensor:
        return ops.hadamard(self.dwconv(self.lin(rgb)), self.gate_lin(rgb))


class MLP(Module):
    def __init__(self, init: Initializer, name: str, channels: int, expansion: int):
        self.fc1 = Linear(init, f"{name}.fc1", channels, channels * expansion)
        self.fc2 = Linear(init, f"{name}.fc2", channels * expansion, channels)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class RGBDBlock(Module):
    """GAA (optional) + LEA + base, concat-and-project fusion, per-branch MLPs.

    Both sub-blocks are residual on each branch, with batch norm in front and
    drop-path on the residual branch during training.
    """

    def __init__(self, init: Initializer, name: str, c_rgb: int, c_d: int, expansion: int, heads: int,
                 has_gaa: bool, pool_k: int = 7, lea_kernel: int = 7, base_kernel: int = 7,
                 q_fusion: str = "q", lea_fusion: str = "hadamard", drop_path_rate: float = 0.0):
        self.drop_path_rate = drop_path_rate
        self.norm_rgb = BatchNorm2d(init, f"{name}.norm_rgb", c_rgb)
        self.norm_depth = BatchNorm2d(init, f"{name}.norm_depth", c_d)
        self.gaa = GAA(init, f"{name}.gaa", c_rgb, c_d, heads, pool_k, q_fusion) if has_gaa else None
        self.lea = LEA(init, f"{name}.lea", c_rgb, c_d, lea_kernel, lea_fusion)
        self.base = BaseModule(init, f"{name}.base", c_rgb, base_kernel)
        fused = c_rgb + c_d * (2 if has_gaa else 1)
        self.proj_rgb = Linear(init, f"{name}.proj_rgb", fused, c_rgb)
        self.proj_depth = Linear(init, f"{name}.proj_depth", fused, c_d)
        self.mlp_norm_rgb = BatchNorm2d(init, f"{name}.mlp_norm_rgb", c_rgb)
        self.mlp_norm_depth = BatchNorm2d(init, f"{name}.mlp_norm_depth", c_d)
        self.mlp_rgb = MLP(init, f"{name}.mlp_rgb", c_rgb, expansion)
        self.mlp_depth = MLP(init, f"{name}.mlp_depth", c_d, expansion)

    @property
    def has_gaa(self) -> bool:
        return self.gaa is not None

    def output_layers(self):
        """Layers whose zeroing turns the block into the identity."""
        return [self.proj_rgb, self.proj_depth, self.mlp_rgb.fc2, self.mlp_depth.fc2]

    def forward(self, f: DualFeatures, rng: Rng | None = None) -> DualFeatures:
        rgb, depth = f.rgb, f.depth
        rn, dn = self.norm_rgb(rgb), self.norm_depth(depth)
        parts = [self.gaa(rn, dn)] if self.gaa is not None else []
        parts += [self.lea(rn, dn), self.base(rn)]
        fused = ops.concat(parts, axis=1)
        rng = rng or Rng(0)
        p, train = self.drop_path_rate, self.training
        # one mask per sub-block, shared by both branches: fresh splits replay the same draws
        rgb = ops.add(rgb, drop_path(self.proj_rgb(fused), p, train, rng.split("attn")))
        depth = ops.add(depth, drop_path(self.proj_depth(fused), p, train, rng.split("attn")))
        rgb = ops.add(rgb, drop_path(self.mlp_rgb(self.mlp_norm_rgb(rgb)), p, train, rng.split("mlp")))
        depth = ops.add(depth, drop_path(self.mlp_depth(self.mlp_norm_depth(depth)), p, train, rng.split("mlp")))
        return DualFeatures(rgb, depth)
