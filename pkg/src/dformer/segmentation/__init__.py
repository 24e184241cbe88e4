"""Segmentation decoder, finetuning, inference and metrics."""

from .decoder import DecoderHead, NMFContext, SegmentationModel, nmf_multiplicative
from .finetune import FinetuneHyper, FinetuneResult, finetune_run, load_encoder_weights
from .inference import MSFLIP_SCALES, evaluate_confusion, labels_from_probs, msflip_predict, predict
from .metrics import ConfusionMatrix, miou, saliency_metrics

__all__ = ["DecoderHead", "NMFContext", "SegmentationModel", "nmf_multiplicative", "FinetuneHyper",
           "FinetuneResult", "finetune_run", "load_encoder_weights", "MSFLIP_SCALES",
           "evaluate_confusion", "labels_from_probs", "msflip_predict", "predict", "ConfusionMatrix",
           "miou", "saliency_metrics"]
