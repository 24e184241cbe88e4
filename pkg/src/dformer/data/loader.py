"""Batching of manifest samples into normalized NCHW arrays."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from ..core.rng import Rng
from .augment import AugmentParams, augment
from .synthetic import DatasetManifest, RGBDSample

DEPTH_MODES = ("depth", "dup3", "rgb")
# inputs live in [0, 1]; the network sees them centred with unit-ish scale
INPUT_MEAN = 0.5
INPUT_STD = 0.25


def depth_channels_for(mode: str) -> int:
    if mode not in DEPTH_MODES:
        raise ValueError(f"depth mode must be one of {DEPTH_MODES}, got {mode!r}")
    return 1 if mode == "depth" else 3


def depth_input(sample: RGBDSample, mode: str) -> np.ndarray:
    """The H x W x C array fed to the depth branch.

    ``dup3`` repeats the depth map across three channels; ``rgb`` feeds the
    colour image instead, which gives the depth-free RGB+RGB baseline.
    """
    if mode == "depth":
        return sample.depth
    if mode == "dup3":
        return np.repeat(sample.depth, 3, axis=-1)
    if mode == "rgb":
        return sample.rgb
    raise ValueError(f"depth mode must be one of {DEPTH_MODES}, got {mode!r}")


class RGBDDataset:
    """In-memory view of a manifest with optional augmentation."""

    def __init__(self, manifest: DatasetManifest, depth_mode: str = "depth"):
        depth_channels_for(depth_mode)
        if len(manifest) == 0:
            raise ValueError(f"dataset at {manifest.root} is empty")
        self.manifest = manifest
        self.depth_mode = depth_mode
        self.samples = [manifest.load(i) for i in range(len(manifest))]

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return self.manifest.num_classes

    def batch(self, indices: Sequence[int], rng: Rng | None = None,
              aug: AugmentParams | None = None, dtype=np.float32):
        """(rgb [B,3,H,W], depth [B,C,H,W], targets) for the given sample indices."""
        rgbs, depths, targets = [], [], []
        for j, i in enumerate(indices):
            s = self.samples[i]
            if aug is not None:
                s = augment(s, (rng or Rng(0)).split(j), aug)
            rgbs.append(s.rgb)
            depths.append(depth_input(s, self.depth_mode))
            targets.append(s.target)
        rgb = (np.stack(rgbs).transpose(0, 3, 1, 2) - INPUT_MEAN) / INPUT_STD
        depth = (np.stack(depths).transpose(0, 3, 1, 2) - INPUT_MEAN) / INPUT_STD
        if isinstance(targets[0], np.ndarray):
            tgt = np.stack(targets).astype(np.int64)
        else:
            tgt = np.asarray(targets, dtype=np.int64)
        return rgb.astype(dtype), depth.astype(dtype), tgt

    def epoch_batches(self, indices: Sequence[int], batch_size: int, rng: Rng,
                      shuffle: bool = True) -> Iterator[list[int]]:
        """Seed-determined batch order; the last partial batch is kept."""
        idx = np.asarray(indices)
        if shuffle:
            idx = idx[rng.permutation(len(idx))]
        for s in range(0, len(idx), batch_size):
            yield [int(i) for i in idx[s:s + batch_size]]


def split_indices(n: int, seed: int, val_fraction: float = 0.2) -> tuple[list[int], list[int]]:
    """Fixed 80/20 train/val split by seeded shuffle."""
    perm = Rng(seed).split("split").permutation(n)
    n_val = max(1, int(round(n * val_fraction))) if n > 1 else 0
    return sorted(int(i) for i in perm[n_val:]), sorted(int(i) for i in perm[:n_val])
