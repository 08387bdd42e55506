"""Scaled weight standardization and the convolution built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, ops
from ..errors import ConfigError, ShapeError
from .module import Module, Parameter, he_normal

# Var(gamma * relu(z)) = 1 for z ~ N(0, 1) since Var(relu(z)) = (1 - 1/pi) / 2.
RELU_GAMMA = math.sqrt(2.0 / (1.0 - 1.0 / math.pi))


def gamma_for_nonlinearity(kind: str) -> float:
    if kind == "identity":
        return 1.0
    if kind == "relu":
        return RELU_GAMMA
    raise ConfigError(f"no variance-preserving gamma known for nonlinearity '{kind}'", field="nonlinearity")


def standardize_weight(weight: Tensor, gain: Tensor, gamma: float, eps: float = 1e-5) -> Tensor:
    """Differentiable row standardization of ``weight[C_out, ...]``.

    Each output row is centred, divided by ``sqrt(max(var, eps))`` and scaled
    by ``gain * gamma / sqrt(fan_in)``. Rows with variance at or below ``eps``
    use the fixed ``sqrt(eps)`` divisor, so a constant row maps to zeros.
    """
    cout = weight.shape[0]
    if gain.shape != (cout,):
        raise ShapeError("standardize_weight", weight.shape, gain.shape, detail="gain must be [C_out]")
    fan_in = weight.size // cout
    if fan_in < 2:
        raise ConfigError("weight standardization needs fan_in >= 2", field="sws.fan_in")
    w = weight.data.reshape(cout, fan_in)
    centred = w - w.mean(axis=1, keepdims=True)
    var = (centred * centred).mean(axis=1, keepdims=True)
    active = var > eps
    sigma = np.sqrt(np.where(active, var, eps))
    unit = centred / sigma
    base = gamma / math.sqrt(fan_in)
    amp = gain.data[:, None] * base
    out = (amp * unit).reshape(weight.shape)

    def backward(g):
        g2 = g.reshape(cout, fan_in)
        dgain = (g2 * unit).sum(axis=1) * base
        du = amp * g2
        dw_active = (du - du.mean(axis=1, keepdims=True)
                     - unit * (du * unit).mean(axis=1, keepdims=True)) / sigma
        dw_flat = (du - du.mean(axis=1, keepdims=True)) / sigma
        dw = np.where(active, dw_active, dw_flat).reshape(weight.shape)
        return dw, dgain

    return Tensor._from_op(out, (weight, gain), backward)


@dataclass
class SwsParams:
    """Raw weight plus the pieces of the effective scale ``gain * gamma / sqrt(fan_in)``."""

    weight: np.ndarray
    gain: np.ndarray | None = None
    gamma: float = 1.0
    bias: np.ndarray | None = None
    eps: float = 1e-5

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        cout = self.weight.shape[0]
        self.gain = np.ones(cout) if self.gain is None else np.asarray(self.gain, dtype=np.float64)
        self.bias = np.zeros(cout) if self.bias is None else np.asarray(self.bias, dtype=np.float64)

    @property
    def fan_in(self) -> int:
        return self.weight.size // self.weight.shape[0]

    @property
    def gamma_eff(self) -> np.ndarray:
        return self.gain * self.gamma / math.sqrt(self.fan_in)


def sws_standardize(p: SwsParams) -> np.ndarray:
    return standardize_weight(Tensor(p.weight), Tensor(p.gain), p.gamma, p.eps).data


class ScaledStdConv2d(Module):
    """Convolution whose kernel is re-standardized from the raw weight on every call."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int = 1,
                 padding: int = 0, gamma: float = 1.0, eps: float = 1e-5,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(he_normal(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        self.gain = Parameter(np.ones(out_channels))
        self.bias = Parameter(np.zeros(out_channels))
        self.gamma = gamma
        self.eps = eps
        self.stride = stride
        self.padding = padding
        self.kernel_size = kernel_size

    def standardized_weight(self) -> Tensor:
        return standardize_weight(self.weight, self.gain, self.gamma, self.eps)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.standardized_weight(), self.bias, self.stride, self.padding)
