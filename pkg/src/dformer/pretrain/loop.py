"""RGB-D classification pretraining."""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..core import ops
from ..core.init import DEFAULT_INIT_STD, Initializer
from ..core.optim import AdamW
from ..core.rdt import save_checkpoint
from ..core.rng import Rng
from ..core.tensor import NonFiniteError, Tensor, backward, default_dtype, no_grad
from ..data.augment import AugmentParams
from ..data.loader import RGBDDataset
from ..encoder.config import VariantConfig
from ..training import (MetricsLog, TrainState, has_train_state, load_train_state,
                        recalibrate_batch_norm, save_train_state)
from .head import ClassificationModel
from .schedule import CosineWarmup, lr_at, schedule_to_dict

METRIC_FIELDS = ("epoch", "step", "lr", "loss", "top1")


@dataclass
class PretrainHyper:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.05
    warmup_epochs: int = 1
    label_smoothing: float = 0.1
    flip_p: float = 0.5
    init_std: float = DEFAULT_INIT_STD
    seed: int = 0
    # stop after this many epochs in this invocation (the run stays resumable)
    stop_after: int | None = None


@dataclass
class PretrainResult:
    model: ClassificationModel
    state: TrainState
    top1: list[float]
    out: Path


def _dtype(model):
    return model.parameters()[0].data.dtype


def top1_accuracy(logits: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == targets))


def evaluate_top1(model: ClassificationModel, data: RGBDDataset, indices, batch_size: int = 32) -> float:
    was = model.training
    model.eval()
    hits = 0
    with no_grad():
        for s in range(0, len(indices), batch_size):
            rgb, depth, tgt = data.batch(indices[s:s + batch_size], dtype=_dtype(model))
            logits = model(Tensor(rgb), Tensor(depth)).data
            hits += int(np.sum(np.argmax(logits, axis=1) == tgt))
    model.train(was)
    return hits / len(indices)


def recalibrate(model, data: RGBDDataset, indices, batch_size: int) -> None:
    """Refresh BN statistics with the current weights on unaugmented training batches."""
    def batches():
        for s in range(0, len(indices), batch_size):
            rgb, depth, _ = data.batch(indices[s:s + batch_size], dtype=_dtype(model))
            if len(rgb) > 1:
                yield Tensor(rgb), Tensor(depth)
    recalibrate_batch_norm(model, batches())


def pretrain_run(cfg: VariantConfig, data: RGBDDataset, hyper: PretrainHyper,
                 out: str | os.PathLike, resume: bool = True) -> PretrainResult:
    """Train the encoder plus a classifier head; writes under ``out``.

    Outputs: ``metrics.log``, ``best.ckpt`` (highest epoch top-1), ``last.ckpt``
    and the resumable ``state.ckpt``/``state.json`` pair. An existing state in
    ``out`` is resumed when ``resume`` is true.
    """
    if len(data) == 0:
        raise ValueError("pretraining dataset is empty")
    if data.manifest.mode != "classify":
        raise ValueError("pretraining needs a classification dataset (class id targets)")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    root = Rng(hyper.seed)
    model = ClassificationModel(cfg, Initializer(root.split("init"), hyper.init_std), data.num_classes)
    dtype = default_dtype()
    model.to(dtype)
    opt = AdamW(model.parameters(), lr=hyper.lr, weight_decay=hyper.weight_decay)
    indices = list(range(len(data)))
    steps_per_epoch = math.ceil(len(indices) / hyper.batch_size)
    total = steps_per_epoch * hyper.epochs
    sched = CosineWarmup(hyper.lr, min(hyper.warmup_epochs * steps_per_epoch, total), total)
    aug = AugmentParams(flip_p=hyper.flip_p, scale_range=(1.0, 1.0))

    resuming = resume and has_train_state(out)
    if resuming:
        state = load_train_state(out, model, opt)
    else:
        state = TrainState(seed=hyper.seed, schedule=schedule_to_dict(sched))
    log = MetricsLog(out / "metrics.log", METRIC_FIELDS, resume=resuming)
    if resuming:
        log.truncate_after(state.epoch)

    top1s = []
    model.train()
    params = model.parameters()
    ran = 0
    while state.epoch < hyper.epochs:
        if hyper.stop_after is not None and ran >= hyper.stop_after:
            break
        epoch_rng = root.split("epoch", state.epoch)
        losses = []
        lr = 0.0
        for b, idx in enumerate(data.epoch_batches(indices, hyper.batch_size, epoch_rng.split("order"))):
            rng_b = epoch_rng.split("batch", b)
            rgb, depth, tgt = data.batch(idx, rng_b.split("aug"), aug, dtype)
            lr = lr_at(state.step, sched)
            logits = model(Tensor(rgb), Tensor(depth), rng_b.split("drop"))
            loss = ops.cross_entropy(logits, tgt, label_smoothing=hyper.label_smoothing)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteError(f"non-finite loss {value} at epoch {state.epoch} step {state.step}")
            opt.zero_grad()
            backward(loss, params=params)
            opt.step(lr)
            losses.append(value)
            state.step += 1
        state.epoch += 1
        ran += 1
        recalibrate(model, data, indices, hyper.batch_size)
        t1 = evaluate_top1(model, data, indices)
        top1s.append(t1)
        mean_loss = float(np.mean(losses))
        state.loss_history.append(mean_loss)
        log.write(epoch=state.epoch, step=state.step, lr=lr, loss=mean_loss, top1=t1)
        if t1 > state.best_metric:
            state.best_metric, state.best_epoch = t1, state.epoch
            save_checkpoint(model.state_dict(), out / "best.ckpt")
        save_checkpoint(model.state_dict(), out / "last.ckpt")
        save_train_state(out, model, opt, state)
    return PretrainResult(model, state, top1s, out)


def hyper_to_dict(h: PretrainHyper) -> dict:
    return asdict(h)
