"""Classification pretraining of the RGB-D encoder."""

from .head import ClassificationModel, ClassifierHead
from .loop import PretrainHyper, PretrainResult, evaluate_top1, pretrain_run, top1_accuracy
from .schedule import CosineWarmup, Poly, lr_at

__all__ = ["ClassificationModel", "ClassifierHead", "PretrainHyper", "PretrainResult", "evaluate_top1",
           "pretrain_run", "top1_accuracy", "CosineWarmup", "Poly", "lr_at"]
