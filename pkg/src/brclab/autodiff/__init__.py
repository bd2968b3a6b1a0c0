"""Minimal reverse-mode automatic differentiation on float64 numpy arrays."""

from brclab.autodiff import ops
from brclab.autodiff.gradcheck import grad_check, numerical_grad
from brclab.autodiff.layers import (
    BroNet,
    DenseLayer,
    LayerNorm,
    Module,
    ResidualBlock,
    TanhGaussianActor,
    forward,
)
from brclab.autodiff.params import AdamW, ParameterSet, adamw_step
from brclab.autodiff.tensor import GradTape, Tensor, backward

__all__ = [
    "AdamW",
    "BroNet",
    "DenseLayer",
    "GradTape",
    "LayerNorm",
    "Module",
    "ParameterSet",
    "ResidualBlock",
    "TanhGaussianActor",
    "Tensor",
    "adamw_step",
    "backward",
    "forward",
    "grad_check",
    "numerical_grad",
    "ops",
]
