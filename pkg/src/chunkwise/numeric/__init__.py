"""Minimal dense-tensor engine with reverse-mode differentiation."""

from . import ops
from .gradcheck import GradCheckError, grad_check
from .optim import AdamW
from .tensor import ComputationRecord, ShapeMismatch, Tape, Tensor

__all__ = [
    "AdamW",
    "ComputationRecord",
    "GradCheckError",
    "ShapeMismatch",
    "Tape",
    "Tensor",
    "grad_check",
    "ops",
]
