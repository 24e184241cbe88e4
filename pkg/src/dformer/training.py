"""Plumbing shared by the training loops: resumable state and metric logs."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core.nn import BatchNorm2d, Module
from .core.optim import AdamState, AdamW
from .core.rdt import load_checkpoint, save_checkpoint
from .core.tensor import no_grad


def recalibrate_batch_norm(model: Module, batches) -> None:
    """Replace BN running statistics by their average over ``batches``.

    ``batches`` yields argument tuples for ``model``. Only the BN layers run in
    train mode, so drop-path and other stochastic layers stay off. Momentum
    ``1/k`` on the k-th batch turns the exponential average into a plain mean.
    """
    was = [m.training for m in model.modules()]
    bns = [m for m in model.modules() if isinstance(m, BatchNorm2d)]
    saved = [b.momentum for b in bns]
    model.eval()
    for b in bns:
        b.training = True
    try:
        with no_grad():
            for k, args in enumerate(batches, start=1):
                for b in bns:
                    b.momentum = 1.0 / k
                model(*args)
    finally:
        for b, mom in zip(bns, saved):
            b.momentum = mom
        for m, t in zip(model.modules(), was):
            m.training = t


class MetricsLog:
    """Append-only comma-separated records with a fixed header line."""

    def __init__(self, path: str | os.PathLike, fields: tuple[str, ...], resume: bool = False):
        self.path = Path(path)
        self.fields = fields
        if not resume or not self.path.exists():
            self.path.write_text(",".join(fields) + "\n", encoding="utf-8")

    def write(self, **values) -> str:
        line = ",".join(_fmt(values[k]) for k in self.fields)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        return line

    def truncate_after(self, epoch: int) -> None:
        """Drop records past ``epoch`` (used when resuming from an older state)."""
        lines = self.path.read_text(encoding="utf-8").splitlines()
        keep = [lines[0]] + [ln for ln in lines[1:] if int(ln.split(",")[0]) <= epoch]
        self.path.write_text("\n".join(keep) + "\n", encoding="utf-8")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


@dataclass
class TrainState:
    """Everything besides the weights needed to continue a run bitwise."""

    step: int = 0
    epoch: int = 0
    seed: int = 0
    schedule: dict = field(default_factory=dict)
    loss_history: list[float] = field(default_factory=list)
    best_metric: float = -1.0
    best_epoch: int = -1


STATE_CKPT = "state.ckpt"
STATE_JSON = "state.json"


def save_train_state(out: str | os.PathLike, model: Module, opt: AdamW, state: TrainState) -> None:
    out = Path(out)
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    for i, (m, v) in enumerate(zip(opt.state.m, opt.state.v)):
        tensors[f"opt.m.{i:04d}"] = m
        tensors[f"opt.v.{i:04d}"] = v
    save_checkpoint(tensors, out / STATE_CKPT)
    meta = asdict(state)
    meta["opt_step"] = opt.state.step
    tmp = out / (STATE_JSON + ".tmp")
    tmp.write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")
    os.replace(tmp, out / STATE_JSON)


def load_train_state(out: str | os.PathLike, model: Module, opt: AdamW) -> TrainState:
    out = Path(out)
    tensors = load_checkpoint(out / STATE_CKPT)
    model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model.")})
    n = len(opt.params)
    m = [np.array(tensors[f"opt.m.{i:04d}"], dtype=opt.params[i].data.dtype) for i in range(n)]
    v = [np.array(tensors[f"opt.v.{i:04d}"], dtype=opt.params[i].data.dtype) for i in range(n)]
    meta = json.loads((out / STATE_JSON).read_text(encoding="utf-8"))
    opt.state = AdamState(m, v, meta.pop("opt_step"))
    return TrainState(**meta)


def has_train_state(out: str | os.PathLike) -> bool:
    out = Path(out)
    return (out / STATE_CKPT).exists() and (out / STATE_JSON).exists()
