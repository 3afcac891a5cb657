"""Deterministic float64 tensor engine with reverse-mode differentiation."""

from .tensor import Parameter, Tensor, backward
from .rng import RngState
from .optim import Adam
from . import functional

__all__ = ["Tensor", "Parameter", "backward", "RngState", "Adam", "functional"]
