"""Segmentation finetuning with per-epoch validation and a final report."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import ops
from ..core.init import DEFAULT_INIT_STD, Initializer
from ..core.optim import AdamW
from ..core.rdt import load_checkpoint, save_checkpoint
from ..core.rng import Rng
from ..core.tensor import NonFiniteError, Tensor, backward, default_dtype
from ..data.augment import AugmentParams
from ..data.loader import RGBDDataset, split_indices
from ..encoder.config import VariantConfig
from ..pretrain.schedule import Poly, lr_at, schedule_to_dict
from ..training import (MetricsLog, TrainState, has_train_state, load_train_state,
                        recalibrate_batch_norm, save_train_state)
from .decoder import SegmentationModel
from .inference import MSFLIP_SCALES, evaluate_confusion
from .metrics import IGNORE_INDEX, miou

METRIC_FIELDS = ("epoch", "step", "lr", "loss", "miou")


@dataclass
class FinetuneHyper:
    epochs: int = 40
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 0.01
    power: float = 0.9
    warmup_epochs: int = 0
    flip_p: float = 0.5
    scale_range: tuple[float, float] = (0.5, 1.75)
    init_std: float = DEFAULT_INIT_STD
    seed: int = 0
    val_fraction: float = 0.2  # 0 evaluates on the training samples themselves
    msflip: bool = False
    scales: tuple[float, ...] = MSFLIP_SCALES
    max_steps: int | None = None
    freeze_encoder: bool = False
    eval_every: int = 1
    workers: int = 1
    stop_after: int | None = None


@dataclass
class FinetuneResult:
    model: SegmentationModel
    state: TrainState
    miou_history: list[float]
    report: dict
    out: Path
    train_indices: list[int] = field(default_factory=list)
    val_indices: list[int] = field(default_factory=list)


def load_encoder_weights(model: SegmentationModel, source) -> list[str]:
    """Copy encoder weights from a checkpoint path or state dict; heads are ignored.

    Every encoder tensor must be present with a matching shape.
    """
    state = load_checkpoint(source) if isinstance(source, (str, os.PathLike)) else source
    enc = {k: v for k, v in state.items() if not k.startswith(("head.", "decoder."))}
    return model.encoder.load_state_dict(enc, strict=True)


def _segmentation_loss(logits: Tensor, tgt: np.ndarray) -> Tensor:
    if logits.shape[1] == 1:
        valid = tgt != IGNORE_INDEX
        return ops.binary_cross_entropy_with_logits(logits, (tgt > 0) & valid, valid[:, None])
    return ops.cross_entropy(logits, tgt, ignore_index=IGNORE_INDEX)


def finetune_run(cfg: VariantConfig, data: RGBDDataset, hyper: FinetuneHyper, out: str | os.PathLike,
                 pretrained=None, num_classes: int | None = None, resume: bool = True) -> FinetuneResult:
    """Finetune encoder + decoder on a segmentation manifest.

    ``pretrained`` is a checkpoint path or state dict whose encoder weights
    seed the model; the decoder is always freshly initialized. Writes
    ``metrics.log``, ``best.ckpt``, ``last.ckpt``, ``report.txt`` and
    ``curve.dat`` under ``out``.
    """
    if len(data) == 0:
        raise ValueError("finetuning dataset is empty")
    if data.manifest.mode != "segment":
        raise ValueError("finetuning needs a segmentation dataset (label-map targets)")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    root = Rng(hyper.seed)
    k = data.num_classes if num_classes is None else num_classes
    model = SegmentationModel(cfg, Initializer(root.split("init"), hyper.init_std), k)
    dtype = default_dtype()
    model.to(dtype)
    if pretrained is not None:
        load_encoder_weights(model, pretrained)
    if hyper.freeze_encoder:
        for p in model.encoder.parameters():
            p.requires_grad = False
        params = model.decoder.parameters()
    else:
        params = model.parameters()
    opt = AdamW(params, lr=hyper.lr, weight_decay=hyper.weight_decay)

    if hyper.val_fraction > 0:
        train_idx, val_idx = split_indices(len(data), hyper.seed, hyper.val_fraction)
    else:
        train_idx = val_idx = list(range(len(data)))
    steps_per_epoch = math.ceil(len(train_idx) / hyper.batch_size)
    total = steps_per_epoch * hyper.epochs
    if hyper.max_steps is not None:
        total = min(total, hyper.max_steps)
    sched = Poly(hyper.lr, total, hyper.power, min(hyper.warmup_epochs * steps_per_epoch, total))
    aug = AugmentParams(hyper.flip_p, tuple(hyper.scale_range))

    resuming = resume and has_train_state(out)
    state = load_train_state(out, model, opt) if resuming else \
        TrainState(seed=hyper.seed, schedule=schedule_to_dict(sched))
    log = MetricsLog(out / "metrics.log", METRIC_FIELDS, resume=resuming)
    if resuming:
        log.truncate_after(state.epoch)

    def calib_batches():
        for s in range(0, len(train_idx), hyper.batch_size):
            rgb, depth, _ = data.batch(train_idx[s:s + hyper.batch_size], dtype=dtype)
            if len(rgb) > 1:
                yield Tensor(rgb), Tensor(depth)

    history = []
    ran = 0
    model.train()
    while state.epoch < hyper.epochs and state.step < total:
        if hyper.stop_after is not None and ran >= hyper.stop_after:
            break
        epoch_rng = root.split("epoch", state.epoch)
        losses, lr = [], 0.0
        for b, idx in enumerate(data.epoch_batches(train_idx, hyper.batch_size, epoch_rng.split("order"))):
            if state.step >= total:
                break
            rng_b = epoch_rng.split("batch", b)
            rgb, depth, tgt = data.batch(idx, rng_b.split("aug"), aug, dtype)
            if np.all(tgt == IGNORE_INDEX):
                tgt = data.batch(idx, dtype=dtype)[2]
            lr = lr_at(state.step, sched)
            loss = _segmentation_loss(model(Tensor(rgb), Tensor(depth), rng_b.split("drop")), tgt)
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
        last = state.epoch >= hyper.epochs or state.step >= total
        if state.epoch % hyper.eval_every == 0 or last:
            recalibrate_batch_norm(model, calib_batches())
            m, _ = miou(evaluate_confusion(model, data, val_idx, k, hyper.batch_size, workers=hyper.workers))
        else:
            m = float("nan")
        history.append(m)
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        state.loss_history.append(mean_loss)
        log.write(epoch=state.epoch, step=state.step, lr=lr, loss=mean_loss, miou=m)
        if m == m and m > state.best_metric:
            state.best_metric, state.best_epoch = m, state.epoch
            save_checkpoint(model.state_dict(), out / "best.ckpt")
        save_checkpoint(model.state_dict(), out / "last.ckpt")
        save_train_state(out, model, opt, state)

    report = evaluate_report(model, data, val_idx, k, hyper, cfg.name)
    write_report(report, out)
    return FinetuneResult(model, state, history, report, out, train_idx, val_idx)


def evaluate_report(model: SegmentationModel, data: RGBDDataset, indices, num_classes: int,
                    hyper: FinetuneHyper, variant: str) -> dict:
    cm = evaluate_confusion(model, data, indices, num_classes, hyper.batch_size, workers=hyper.workers)
    single, per = miou(cm)
    row = {"variant": variant, "params": model.num_parameters(), "miou_single": single,
           "miou_msflip": float("nan"), "per_class_iou": per}
    if hyper.msflip:
        cm_ms = evaluate_confusion(model, data, indices, num_classes, hyper.batch_size, msflip=True,
                                   scales=hyper.scales, workers=hyper.workers)
        row["miou_msflip"], row["per_class_iou_msflip"] = miou(cm_ms)
    return row


REPORT_HEADER = "variant,params,miou_single,miou_msflip,per_class_iou"


def format_report(rows) -> str:
    lines = [REPORT_HEADER]
    for r in rows:
        per = " ".join(f"{v:.4f}" for v in r["per_class_iou"])
        lines.append(f"{r['variant']},{r['params']},{r['miou_single']:.4f},{r['miou_msflip']:.4f},{per}")
    return "\n".join(lines) + "\n"


def write_report(report: dict, out: str | os.PathLike) -> None:
    out = Path(out)
    (out / "report.txt").write_text(format_report([report]), encoding="utf-8")
    # gnuplot-style performance/compute point
    (out / "curve.dat").write_text(
        "# params miou_single miou_msflip\n"
        f"{report['params']} {report['miou_single']:.6f} {report['miou_msflip']:.6f}\n", encoding="utf-8")
