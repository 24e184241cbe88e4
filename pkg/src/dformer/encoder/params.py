"""Parameter accounting and checkpoint I/O for encoder-based models."""

from __future__ import annotations

import os

from ..core.init import MetaInitializer
from ..core.nn import Module
from ..core.rdt import load_checkpoint, save_checkpoint
from .config import REFERENCE_PARAMS_M, VariantConfig
from .model import DFormerEncoder


def count_parameters(cfg: VariantConfig, include_decoder: bool = False) -> int:
    """Exact learnable-scalar count; built from shape-only parameters."""
    init = MetaInitializer()
    if include_decoder:
        from ..segmentation.decoder import SegmentationModel
        return SegmentationModel(cfg, init).num_parameters()
    return DFormerEncoder(cfg, init).num_parameters()


def parameter_report(cfg: VariantConfig) -> dict:
    n = count_parameters(cfg, include_decoder=True)
    ref = REFERENCE_PARAMS_M.get(cfg.name)
    row = {"variant": cfg.name, "params": n, "encoder_params": count_parameters(cfg)}
    if ref is not None:
        row["reference_m"] = ref
        row["deviation_pct"] = 100.0 * (n / (ref * 1e6) - 1.0)
    return row


def save_model(model: Module, path: str | os.PathLike) -> None:
    save_checkpoint({k: v for k, v in model.state_dict().items()}, path)


def load_model(model: Module, path: str | os.PathLike, strict: bool = True) -> list[str]:
    """Load a checkpoint into ``model``; shape mismatches raise ValueError."""
    return model.load_state_dict(load_checkpoint(path), strict=strict)
