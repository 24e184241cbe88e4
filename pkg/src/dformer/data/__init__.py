"""Synthetic RGB-D data, augmentation and batching."""

from .augment import AugmentParams, augment, resize_bilinear, resize_nearest
from .loader import DEPTH_MODES, RGBDDataset, depth_channels_for, depth_input, split_indices
from .synthetic import (IGNORE_INDEX, RECIPE_VERSION, DatasetManifest, RGBDSample, class_depth_band,
                        gen_synthetic, render_scene)

__all__ = [
    "AugmentParams", "augment", "resize_bilinear", "resize_nearest", "DEPTH_MODES", "RGBDDataset",
    "depth_channels_for", "depth_input", "split_indices", "IGNORE_INDEX", "RECIPE_VERSION",
    "DatasetManifest", "RGBDSample", "class_depth_band", "gen_synthetic", "render_scene",
]
