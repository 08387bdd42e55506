"""Minimal reverse-mode autodiff over float64 numpy arrays."""

from . import ops
from .gradcheck import analytic_grad, grad_check, numeric_grad
from .tensor import Tensor, backward, tensor, zeros

__all__ = ["Tensor", "backward", "tensor", "zeros", "ops", "grad_check", "numeric_grad", "analytic_grad"]
