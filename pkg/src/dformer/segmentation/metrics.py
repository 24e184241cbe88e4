"""Segmentation and saliency metrics."""

from __future__ import annotations

import numpy as np

IGNORE_INDEX = 255
SALIENCY_BETA2 = 0.3
SALIENCY_THRESHOLDS = 256


class ConfusionMatrix:
    """Integer counts indexed [target, prediction]; ignored pixels are skipped."""

    def __init__(self, num_classes: int, ignore_index: int = IGNORE_INDEX):
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.num_classes = num_classes
        self.ignore_index = ignore_index
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred: np.ndarray, target: np.ndarray) -> "ConfusionMatrix":
        pred = np.asarray(pred).reshape(-1).astype(np.int64)
        target = np.asarray(target).reshape(-1).astype(np.int64)
        if pred.shape != target.shape:
            raise ValueError(f"prediction and target sizes differ: {pred.shape} vs {target.shape}")
        keep = target != self.ignore_index
        pred, target = pred[keep], target[keep]
        K = self.num_classes
        if np.any((target < 0) | (target >= K)) or np.any((pred < 0) | (pred >= K)):
            raise ValueError(f"class ids must lie in [0, {K})")
        self.counts += np.bincount(target * K + pred, minlength=K * K).reshape(K, K)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices of different sizes")
        out = ConfusionMatrix(self.num_classes, self.ignore_index)
        out.counts = self.counts + other.counts
        return out

    __add__ = merge

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def miou(cm: ConfusionMatrix) -> tuple[float, list[float]]:
    """Mean IoU over classes with a non-empty union, plus per-class IoU (nan when excluded)."""
    if cm.total == 0:
        raise ValueError("mIoU of an empty confusion matrix")
    c = cm.counts
    tp = np.diag(c).astype(np.float64)
    union = c.sum(axis=0) + c.sum(axis=1) - np.diag(c)
    per = np.full(cm.num_classes, np.nan)
    present = union > 0
    per[present] = tp[present] / union[present]
    return float(np.mean(per[present])), [float(v) for v in per]


def saliency_metrics(pred: np.ndarray, gt: np.ndarray) -> dict[str, float]:
    """MAE and max F-measure over 256 evenly spaced thresholds on [0, 1]."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    pos = gt > 0
    mae = float(np.mean(np.abs(pred - pos)))
    thr = np.linspace(0.0, 1.0, SALIENCY_THRESHOLDS)
    flat, fpos = pred.reshape(-1), pos.reshape(-1)
    # counts of predicted positives and true positives at every threshold via sorting
    order = np.sort(flat)
    pos_sorted = np.sort(flat[fpos])
    n_pred = flat.size - np.searchsorted(order, thr, side="left")
    tp = pos_sorted.size - np.searchsorted(pos_sorted, thr, side="left")
    n_gt = int(fpos.sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(n_pred > 0, tp / np.maximum(n_pred, 1), 0.0)
        recall = np.where(n_gt > 0, tp / max(n_gt, 1), 0.0)
        b2 = SALIENCY_BETA2
        denom = b2 * precision + recall
        f = np.where(denom > 0, (1 + b2) * precision * recall / np.where(denom > 0, denom, 1), 0.0)
    return {"mae": mae, "max_f": float(f.max())}
