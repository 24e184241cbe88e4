"""Geometric augmentation applied identically to rgb, depth and labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.ops import bilinear_matrix
from ..core.rng import Rng
from .synthetic import IGNORE_INDEX, RGBDSample


@dataclass(frozen=True)
class AugmentParams:
    flip_p: float = 0.5
    scale_range: tuple[float, float] = (0.5, 1.75)
    crop: tuple[int, int] | None = None  # defaults to the input size


def resize_bilinear(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Half-pixel bilinear resize of an H x W x C array."""
    H, W = img.shape[:2]
    if (H, W) == tuple(size):
        return img
    mh = bilinear_matrix(H, size[0])
    mw = bilinear_matrix(W, size[1])
    return np.einsum("ih,hwc,jw->ijc", mh, img, mw, optimize=True).astype(img.dtype)


def nearest_index(n_in: int, n_out: int) -> np.ndarray:
    return np.minimum(((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64), n_in - 1)


def resize_nearest(label: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    H, W = label.shape[:2]
    return label[nearest_index(H, size[0])[:, None], nearest_index(W, size[1])[None, :]]


def _place(arr: np.ndarray, crop: tuple[int, int], oy: int, ox: int, fill) -> np.ndarray:
    """Window of ``arr`` starting at (oy, ox); negative offsets pad with ``fill``."""
    ch, cw = crop
    out = np.full((ch, cw) + arr.shape[2:], fill, dtype=arr.dtype)
    H, W = arr.shape[:2]
    ys, xs = max(oy, 0), max(ox, 0)
    ye, xe = min(oy + ch, H), min(ox + cw, W)
    if ye > ys and xe > xs:
        out[ys - oy:ye - oy, xs - ox:xe - ox] = arr[ys:ye, xs:xe]
    return out


def augment(sample: RGBDSample, rng: Rng, params: AugmentParams = AugmentParams()) -> RGBDSample:
    """Random horizontal flip, random rescale, then a random crop back to ``params.crop``.

    When the rescaled image is smaller than the crop it is padded: zeros for
    rgb/depth, ``IGNORE_INDEX`` for labels.
    """
    rgb, depth, label = sample.rgb, sample.depth, sample.target
    H, W = rgb.shape[:2]
    crop = tuple(params.crop) if params.crop is not None else (H, W)
    seg = isinstance(label, np.ndarray) and label.ndim == 2
    g = rng.generator
    if g.random() < params.flip_p:
        rgb, depth = rgb[:, ::-1], depth[:, ::-1]
        if seg:
            label = label[:, ::-1]
    lo, hi = params.scale_range
    s = g.uniform(lo, hi) if hi > lo else lo
    size = (max(1, int(round(H * s))), max(1, int(round(W * s))))
    rgb = resize_bilinear(rgb, size)
    depth = resize_bilinear(depth, size)
    if seg:
        label = resize_nearest(label, size)
    oy = int(g.integers(0, size[0] - crop[0] + 1)) if size[0] >= crop[0] else -int(g.integers(0, crop[0] - size[0] + 1))
    ox = int(g.integers(0, size[1] - crop[1] + 1)) if size[1] >= crop[1] else -int(g.integers(0, crop[1] - size[1] + 1))
    if size != crop or (oy, ox) != (0, 0):
        rgb = _place(rgb, crop, oy, ox, 0.0)
        depth = _place(depth, crop, oy, ox, 0.0)
        if seg:
            label = _place(label, crop, oy, ox, IGNORE_INDEX)
    return RGBDSample(np.ascontiguousarray(rgb), np.ascontiguousarray(depth),
                      np.ascontiguousarray(label) if seg else label)
