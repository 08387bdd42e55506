"""Channel descriptors of a normalized 1x1 conv, computed two independent ways.

``gap_closed_form`` pools the layer output directly and also evaluates the
descriptor from input moments and weight statistics alone, without ever
forming the layer output. The two must agree to rounding error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, ops
from ..errors import ConfigError, ShapeError
from .norm import BatchNorm2d, GroupNorm2d
from .sws import standardize_weight

LAYER_KINDS = ("sws", "batch", "group", "layer")


@dataclass
class OneByOneLayer:
    """A kernel-size-1 conv followed by activation normalization, or an SWS conv.

    ``scale``/``shift`` are the per-channel affine parameters: gamma/beta of
    the norm layer, or gain/bias of the SWS conv. ``gamma_nl`` is the fixed
    nonlinearity constant used only by the SWS kind.
    """

    kind: str
    weight: np.ndarray
    scale: np.ndarray | None = None
    shift: np.ndarray | None = None
    gamma_nl: float = 1.0
    groups: int = 1
    eps: float = 1e-5

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind '{self.kind}'", field="layer.kind")
        w = np.asarray(self.weight, dtype=np.float64)
        if w.ndim == 4:
            if w.shape[2:] != (1, 1):
                raise ConfigError(f"closed form needs a 1x1 kernel, got {w.shape[2]}x{w.shape[3]}",
                                  field="layer.kernel_size")
            w = w[:, :, 0, 0]
        if w.ndim != 2:
            raise ShapeError("OneByOneLayer", w.shape, detail="weight must be [C_out, C_in]")
        self.weight = w
        cout = w.shape[0]
        self.scale = np.ones(cout) if self.scale is None else np.asarray(self.scale, dtype=np.float64)
        self.shift = np.zeros(cout) if self.shift is None else np.asarray(self.shift, dtype=np.float64)
        if self.kind == "layer":
            self.groups = 1
        if self.kind in ("group", "layer") and cout % self.groups:
            raise ConfigError(f"{cout} channels not divisible into {self.groups} groups", field="layer.groups")


def _pool_output(x: np.ndarray, layer: OneByOneLayer) -> np.ndarray:
    """Descriptor via the forward pass: GAP of the normalized layer output (train-mode statistics)."""
    xt = Tensor(x)
    w4 = Tensor(layer.weight[:, :, None, None])
    cout = layer.weight.shape[0]
    if layer.kind == "sws":
        w_hat = standardize_weight(w4, Tensor(layer.scale), layer.gamma_nl, layer.eps)
        out = ops.conv2d(xt, w_hat, Tensor(layer.shift))
    else:
        a = ops.conv2d(xt, w4)
        if layer.kind == "batch":
            norm = BatchNorm2d(cout, eps=layer.eps)
        else:
            norm = GroupNorm2d(cout, layer.groups, eps=layer.eps)
        norm.gamma.data = layer.scale.copy()
        norm.beta.data = layer.shift.copy()
        norm.train()
        out = norm(a)
    return ops.global_avg_pool(out).data


def _closed_form(x: np.ndarray, layer: OneByOneLayer) -> np.ndarray:
    b, cin, h, w = x.shape
    hw = h * w
    W = layer.weight
    cout = W.shape[0]
    pix_sum = x.sum(axis=(2, 3))                      # sum_{h,w} X[b, c]
    proj = pix_sum @ W.T                              # sum_{h,w} sum_c W[:, c] X[b, c, h, w]

    if layer.kind == "sws":
        mu = W.mean(axis=1)
        var = ((W - mu[:, None]) ** 2).mean(axis=1)
        sigma = np.sqrt(np.where(var > layer.eps, var, layer.eps))
        gamma_eff = layer.scale * layer.gamma_nl / math.sqrt(cin)
        coef = gamma_eff / (sigma * hw)
        input_total = pix_sum.sum(axis=1, keepdims=True)  # sum_{h,w} sum_c X[b, c, h, w]
        return coef * proj - mu * coef * input_total + layer.shift

    if layer.kind == "batch":
        flat = x.transpose(1, 0, 2, 3).reshape(cin, -1)
        m = flat.mean(axis=1)
        cov = (flat - m[:, None]) @ (flat - m[:, None]).T / flat.shape[1]
        mu = W @ m
        var = np.einsum("oc,cd,od->o", W, cov, W)
        sigma = np.sqrt(var + layer.eps)
        return layer.scale / (sigma * hw) * proj - mu * layer.scale / sigma + layer.shift

    # group / layer: statistics per sample and channel group
    g = layer.groups
    per = cout // g
    flat = x.reshape(b, cin, hw)
    m = flat.mean(axis=2)                                # [B, C_in]
    second = np.einsum("bcp,bdp->bcd", flat, flat) / hw  # [B, C_in, C_in]
    chan_mean = m @ W.T                                  # [B, C_out]
    chan_sq = np.einsum("oc,bcd,od->bo", W, second, W)   # E_hw[A^2] per channel
    grp_mean = chan_mean.reshape(b, g, per).mean(axis=2)
    grp_var = chan_sq.reshape(b, g, per).mean(axis=2) - grp_mean ** 2
    mu = np.repeat(grp_mean, per, axis=1)
    sigma = np.sqrt(np.repeat(grp_var, per, axis=1) + layer.eps)
    return layer.scale / (sigma * hw) * proj - mu * layer.scale / sigma + layer.shift


def gap_closed_form(x, layer: OneByOneLayer) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(pooled layer output, closed-form descriptor)``, both ``[B, C_out]``."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != layer.weight.shape[1]:
        raise ShapeError("gap_closed_form", x.shape, layer.weight.shape)
    return _pool_output(x, layer), _closed_form(x, layer)
