"""Minimal reverse-mode autodiff substrate and the UniPhyNet layer set."""
from . import functional
from .gradcheck import NonDifferentiablePoint, grad_check, grad_check_resampled
from .layers import BatchNorm1d, BiGRU, Conv1d, Dropout, Linear, Module, ModuleList, Parameter
from .rng import RngStream
from .tensor import (
    ShapeError,
    Tensor,
    concat,
    get_dtype,
    no_grad,
    precision,
    set_precision,
)

__all__ = [
    "BatchNorm1d", "BiGRU", "Conv1d", "Dropout", "Linear", "Module", "ModuleList",
    "NonDifferentiablePoint", "Parameter", "RngStream", "ShapeError", "Tensor",
    "concat", "functional", "get_dtype", "grad_check", "grad_check_resampled",
    "no_grad", "precision", "set_precision",
]
