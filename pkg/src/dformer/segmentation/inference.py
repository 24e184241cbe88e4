"""Single-forward and multi-scale flip prediction."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from ..core import ops
from ..core.tensor import Tensor, no_grad
from .metrics import ConfusionMatrix

MSFLIP_SCALES = (0.5, 0.75, 1.0, 1.25, 1.5)


def _probs(model, rgb: Tensor, depth: Tensor) -> Tensor:
    logits = model(rgb, depth)
    return ops.sigmoid(logits) if logits.shape[1] == 1 else ops.softmax(logits, axis=1)


def predict(model, rgb: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Class probabilities [B, K, H, W] from one eval-mode forward."""
    was = model.training
    model.eval()
    try:
        with no_grad():
            return _probs(model, Tensor(rgb), Tensor(depth)).data
    finally:
        model.train(was)


def scaled_size(H: int, W: int, scale: float) -> tuple[int, int]:
    h, w = int(round(H * scale / 32)) * 32, int(round(W * scale / 32)) * 32
    if h < 32 or w < 32:
        raise ValueError(f"scale {scale} maps {H}x{W} below the 32-pixel minimum")
    return h, w


def msflip_predict(model, rgb: np.ndarray, depth: np.ndarray, scales: Sequence[float] = MSFLIP_SCALES,
                   flip: bool = True) -> np.ndarray:
    """Average of class probabilities over rescaled and mirrored copies of the input.

    Each size is rounded to a multiple of 32; probabilities are resized back
    to the input size before averaging.
    """
    if not scales:
        raise ValueError("msflip_predict needs at least one scale")
    H, W = rgb.shape[2:]
    sizes = [scaled_size(H, W, s) for s in scales]
    was = model.training
    model.eval()
    runs = []
    try:
        with no_grad():
            for size in sizes:
                r = ops.bilinear_resize(Tensor(rgb), size)
                d = ops.bilinear_resize(Tensor(depth), size)
                runs.append(ops.bilinear_resize(_probs(model, r, d), (H, W)).data)
                if flip:
                    p = _probs(model, ops.flip(r, -1), ops.flip(d, -1))
                    runs.append(ops.bilinear_resize(ops.flip(p, -1), (H, W)).data)
    finally:
        model.train(was)
    if len(runs) == 1:
        return runs[0]
    return np.mean(np.stack(runs), axis=0)


def labels_from_probs(probs: np.ndarray) -> np.ndarray:
    """Argmax labels (ties go to the lowest index); one-channel maps threshold at 0.5."""
    if probs.shape[1] == 1:
        return (probs[:, 0] >= 0.5).astype(np.int64)
    return np.argmax(probs, axis=1)


def evaluate_confusion(model, data, indices, num_classes: int, batch_size: int = 8,
                       msflip: bool = False, scales=MSFLIP_SCALES, workers: int = 1) -> ConfusionMatrix:
    """Confusion matrix over ``indices``; with several workers each keeps a private matrix."""
    chunks = [list(indices[s:s + batch_size]) for s in range(0, len(indices), batch_size)]
    if not chunks:
        raise ValueError("no samples to evaluate")

    def run(chunk):
        rgb, depth, tgt = data.batch(chunk, dtype=model.parameters()[0].data.dtype)
        if msflip:
            probs = msflip_predict(model, rgb, depth, scales, flip=True)
        else:
            probs = predict(model, rgb, depth)
        if probs.shape[1] == 1:
            tgt = np.where(tgt == 255, 255, (tgt > 0).astype(np.int64))
        return ConfusionMatrix(max(num_classes, 2)).update(labels_from_probs(probs), tgt)

    if workers > 1:
        # mode switches are not thread-safe, so set eval once up front
        was = model.training
        model.eval()
        try:
            with ThreadPoolExecutor(workers) as ex:
                parts = list(ex.map(run, chunks))
        finally:
            model.train(was)
    else:
        parts = [run(c) for c in chunks]
    total = parts[0]
    for p in parts[1:]:
        total = total.merge(p)
    return total
