"""Minimal numpy tensor engine with reverse-mode differentiation."""

from . import ops
from .gradcheck import NondeterministicError, grad_check
from .init import DEFAULT_INIT_STD, Initializer, MetaInitializer, init_trunc_normal, trunc_normal
from .optim import AdamState, AdamW, adamw_step
from .rdt import load_checkpoint, load_rdt, save_checkpoint, save_rdt
from .rng import Rng
from .tensor import (NonFiniteError, Parameter, Tape, Tensor, backward, count_macs, current_tape,
                     default_dtype, no_grad, precision, use_tape)

__all__ = [
    "ops", "grad_check", "NondeterministicError", "DEFAULT_INIT_STD", "Initializer", "MetaInitializer",
    "init_trunc_normal", "trunc_normal", "AdamState", "AdamW", "adamw_step", "load_checkpoint",
    "load_rdt", "save_checkpoint", "save_rdt", "Rng", "NonFiniteError", "Parameter", "Tape", "Tensor",
    "backward", "count_macs", "current_tape", "default_dtype", "no_grad", "precision", "use_tape",
]
