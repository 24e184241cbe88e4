"""Dual-branch RGB-D encoder."""

from .blocks import GAA, LEA, MLP, BaseModule, DualFeatures, RGBDBlock
from .config import LEA_FUSIONS, Q_FUSIONS, REFERENCE_PARAMS_M, VARIANTS, VariantConfig, get_variant, parse_ratio
from .model import DFormerEncoder, DualConv, Stage, Stem, drop_path_rates
from .params import count_parameters, load_model, parameter_report, save_model

__all__ = [
    "GAA", "LEA", "MLP", "BaseModule", "DualFeatures", "RGBDBlock", "LEA_FUSIONS", "Q_FUSIONS",
    "REFERENCE_PARAMS_M", "VARIANTS", "VariantConfig", "get_variant", "parse_ratio", "DFormerEncoder",
    "DualConv", "Stage", "Stem", "drop_path_rates", "count_parameters", "load_model", "parameter_report",
    "save_model",
]
