"""Encoder variant configurations."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from fractions import Fraction

Q_FUSIONS = ("q", "qkv", "none")
LEA_FUSIONS = ("hadamard", "add", "concat")

# reference totals (encoder + decoder) in millions
REFERENCE_PARAMS_M = {"T": 6.0, "S": 18.7, "B": 29.5, "L": 39.0}


@dataclass(frozen=True)
class VariantConfig:
    name: str
    rgb_channels: tuple[int, int, int, int]
    depth_channels: tuple[int, int, int, int]
    depths: tuple[int, int, int, int]
    stem_channels: tuple[int, int]
    expansions: tuple[int, int, int, int] = (8, 8, 4, 4)
    decoder_dim: int = 512
    heads: tuple[int, int, int, int] | None = None
    gaa_pool_k: int = 7
    lea_kernel: int = 7
    base_kernel: int = 7
    drop_path_max: float = 0.1
    depth_in_channels: int = 1
    q_fusion: str = "q"
    lea_fusion: str = "hadamard"
    ham_rank: int = 64
    ham_steps: int = 6
    use_ham: bool = True
    num_classes: int = 40

    def __post_init__(self):
        if self.heads is None:
            object.__setattr__(self, "heads", tuple(default_heads(d) for d in self.depth_channels))
        self.validate()

    def validate(self) -> None:
        if self.q_fusion not in Q_FUSIONS:
            raise ValueError(f"q_fusion must be one of {Q_FUSIONS}, got {self.q_fusion!r}")
        if self.lea_fusion not in LEA_FUSIONS:
            raise ValueError(f"lea_fusion must be one of {LEA_FUSIONS}, got {self.lea_fusion!r}")
        if any(n < 1 for n in self.depths):
            raise ValueError(f"every stage needs at least one block, got {self.depths}")
        if any(e not in (4, 8) for e in self.expansions):
            raise ValueError(f"expansion ratios must be 4 or 8, got {self.expansions}")
        if self.gaa_pool_k < 1:
            raise ValueError("gaa_pool_k must be >= 1")
        for k in (self.lea_kernel, self.base_kernel):
            if k % 2 == 0:
                raise ValueError(f"kernels must be odd, got {k}")
        for h, d in zip(self.heads, self.depth_channels):
            if h < 1 or d % h:
                raise ValueError(f"heads {h} must divide depth channels {d}")
        if min(self.rgb_channels + self.depth_channels + self.stem_channels) < 1:
            raise ValueError("channel counts must be positive")

    def replace(self, **changes) -> "VariantConfig":
        if "depth_channels" in changes and "heads" not in changes:
            changes["heads"] = None
        return dataclasses.replace(self, **changes)

    def with_channel_ratio(self, ratio) -> "VariantConfig":
        """Same RGB widths, depth widths set to ``ratio * C_rgb`` (stem included)."""
        r = Fraction(ratio).limit_denominator(64)
        depth = tuple(max(1, int(c * r)) for c in self.rgb_channels)
        stem_d = max(1, int(self.stem_channels[0] * r))
        return self.replace(depth_channels=depth, stem_channels=(self.stem_channels[0], stem_d))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VariantConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in fields}
        return cls(**kw)


def default_heads(depth_channels: int) -> int:
    h = max(1, depth_channels // 16)
    while depth_channels % h:
        h -= 1
    return h


def parse_ratio(text) -> Fraction:
    return Fraction(str(text)).limit_denominator(64)


VARIANTS: dict[str, VariantConfig] = {
    "T": VariantConfig("T", (32, 64, 128, 256), (16, 32, 64, 128), (3, 3, 5, 2), (16, 8), drop_path_max=0.1),
    "S": VariantConfig("S", (64, 128, 256, 512), (32, 64, 128, 256), (2, 2, 4, 2), (32, 16), drop_path_max=0.1),
    "B": VariantConfig("B", (64, 128, 256, 512), (32, 64, 128, 256), (3, 3, 12, 2), (32, 16), drop_path_max=0.15),
    "L": VariantConfig("L", (96, 192, 288, 576), (48, 96, 144, 288), (3, 3, 12, 3), (48, 24), drop_path_max=0.2),
    # desk-scale configuration used by tests, demos and the acceptance suite
    "tiny-test": VariantConfig("tiny-test", (8, 16, 32, 64), (4, 8, 16, 32), (1, 1, 1, 1), (8, 4),
                               expansions=(4, 4, 4, 4), decoder_dim=32, gaa_pool_k=3, lea_kernel=3,
                               base_kernel=3, drop_path_max=0.0, ham_rank=8, ham_steps=6, num_classes=5),
}


def get_variant(name: str, **overrides) -> VariantConfig:
    try:
        cfg = VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None
    return cfg.replace(**overrides) if overrides else cfg
