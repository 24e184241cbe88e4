"""Classification head on the last RGB stage."""

from __future__ import annotations

from ..core import ops
from ..core.init import Initializer
from ..core.nn import Linear, Module
from ..core.rng import Rng
from ..core.tensor import Tensor
from ..encoder.config import VariantConfig
from ..encoder.model import DFormerEncoder


class ClassifierHead(Module):
    """Global average pool then a linear layer."""

    def __init__(self, init: Initializer, name: str, channels: int, num_classes: int):
        self.fc = Linear(init, f"{name}.fc", channels, num_classes)

    def forward(self, stage4_rgb: Tensor) -> Tensor:
        pooled = ops.mean(stage4_rgb, axis=(2, 3), keepdims=True)
        logits = self.fc(pooled)
        return ops.reshape(logits, logits.shape[:2])


class ClassificationModel(Module):
    _flatten = ("encoder",)

    def __init__(self, cfg: VariantConfig, init: Initializer | None = None, num_classes: int | None = None):
        init = init or Initializer(0)
        self.cfg = cfg
        self.num_classes = cfg.num_classes if num_classes is None else num_classes
        self.encoder = DFormerEncoder(cfg, init)
        self.head = ClassifierHead(init, "head", cfg.rgb_channels[3], self.num_classes)

    def forward(self, rgb: Tensor, depth: Tensor, rng: Rng | None = None) -> Tensor:
        return self.head(self.encoder(rgb, depth, rng)[-1].rgb)
