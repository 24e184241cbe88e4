"""Desk-scale pretraining-transfer comparison.

For each seed: pretrain on RGB-D classification scenes, pretrain a depth-free
RGB+RGB baseline (the colour image fed to both branches), then finetune three
segmentation models: random init, RGB-D init and RGB+RGB init (depth repeated
to three channels). Every arm is scored on a separate test set of scenes that
none of the runs sees during training or model selection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import RGBDDataset, gen_synthetic
from .encoder.config import get_variant
from .pretrain import PretrainHyper, pretrain_run
from .segmentation import FinetuneHyper, evaluate_confusion, finetune_run, miou

ARMS = ("random", "rgbd", "rgb_rgb")


@dataclass
class TransferSetup:
    variant: str = "tiny-test"
    n_shape_classes: int = 4
    pretrain_samples: int = 256
    pretrain_size: int = 32
    pretrain_epochs: int = 20
    finetune_samples: int = 80
    finetune_size: int = 64
    finetune_epochs: int = 20
    finetune_lr: float = 4e-3
    test_samples: int = 96
    seeds: tuple[int, ...] = (0, 1, 2)


@dataclass
class TransferResult:
    miou: dict[str, list[float]] = field(default_factory=lambda: {a: [] for a in ARMS})

    def mean(self, arm: str) -> float:
        return float(np.mean(self.miou[arm]))

    def table(self) -> str:
        lines = ["arm,seeds,mean_miou"]
        for a in ARMS:
            vals = " ".join(f"{v:.4f}" for v in self.miou[a])
            lines.append(f"{a},{vals},{self.mean(a):.4f}")
        return "\n".join(lines) + "\n"


def run_transfer(root: str | Path, setup: TransferSetup = TransferSetup(), log=None) -> TransferResult:
    root = Path(root)
    s = setup
    result = TransferResult()
    for seed in s.seeds:
        base = root / f"seed{seed}"
        # independent scene streams for pretraining and finetuning
        cls = gen_synthetic(1000 + seed, s.pretrain_samples, s.pretrain_size, "classify", s.n_shape_classes,
                            base / "cls")
        seg = gen_synthetic(2000 + seed, s.finetune_samples, s.finetune_size, "segment", s.n_shape_classes + 1,
                            base / "seg")
        test = gen_synthetic(3000 + seed, s.test_samples, s.finetune_size, "segment", s.n_shape_classes + 1,
                             base / "test")
        ph = PretrainHyper(epochs=s.pretrain_epochs, seed=seed)
        ckpts = {}
        for arm, mode in (("rgbd", "depth"), ("rgb_rgb", "rgb")):
            data = RGBDDataset(cls, mode)
            cfg = get_variant(s.variant, depth_in_channels=1 if mode == "depth" else 3,
                              num_classes=s.n_shape_classes)
            res = pretrain_run(cfg, data, ph, base / f"pretrain_{arm}", resume=False)
            ckpts[arm] = res.out / "last.ckpt"
            if log:
                log(f"seed {seed} pretrain {arm}: top-1 {res.top1[-1]:.3f}")
        fh = FinetuneHyper(epochs=s.finetune_epochs, lr=s.finetune_lr, seed=seed)
        for arm in ARMS:
            mode = "dup3" if arm == "rgb_rgb" else "depth"
            cfg = get_variant(s.variant, depth_in_channels=3 if mode == "dup3" else 1,
                              num_classes=s.n_shape_classes + 1)
            res = finetune_run(cfg, RGBDDataset(seg, mode), fh, base / f"finetune_{arm}",
                               pretrained=ckpts.get(arm), resume=False)
            held = RGBDDataset(test, mode)
            m, _ = miou(evaluate_confusion(res.model, held, list(range(len(held))), s.n_shape_classes + 1))
            result.miou[arm].append(m)
            if log:
                log(f"seed {seed} finetune {arm}: val mIoU {res.report['miou_single']:.4f}, test mIoU {m:.4f}")
    return result
