"""Activation normalization layers (batch, group, layer)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, ops
from ..errors import ConfigError, ShapeError
from .module import Module, Parameter

NORM_KINDS = ("batch", "group", "layer", "none")


@dataclass(frozen=True)
class NormConfig:
    kind: str = "batch"
    groups: int = 8
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        if self.kind not in NORM_KINDS:
            raise ConfigError(f"unknown norm kind '{self.kind}'", field="norm.kind")
        if self.eps <= 0:
            raise ConfigError("eps must be positive", field="norm.eps")
        if self.kind == "group" and self.groups < 1:
            raise ConfigError("groups must be positive", field="norm.groups")
        if self.kind == "batch" and not 0.0 < self.momentum < 1.0:
            raise ConfigError("momentum must lie in (0, 1)", field="norm.momentum")

    def validate_channels(self, channels: int) -> None:
        if self.kind == "group" and channels % self.groups:
            raise ConfigError(f"{channels} channels not divisible into {self.groups} groups",
                              field="norm.groups")


class BatchNorm2d(Module):
    """Statistics over (B, H, W); running estimates are used in eval mode."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError("BatchNorm2d", x.shape, (self.channels,))
        if self.training:
            if x.shape[0] < 2:
                raise ConfigError("batch norm in train mode needs a batch of at least 2 samples",
                                  field="batch_size")
            xhat, mu, var = ops.standardize(x, (0, 2, 3), self.eps)
            n = x.shape[0] * x.shape[2] * x.shape[3]
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.reshape(-1)
            self.running_var = (1 - m) * self.running_var + m * var.reshape(-1) * n / (n - 1)
        else:
            shift = self.running_mean[None, :, None, None]
            inv = 1.0 / np.sqrt(self.running_var[None, :, None, None] + self.eps)
            xhat = ops.shift_scale_fixed(x, shift, inv)
        return ops.channel_affine(xhat, self.gamma, self.beta)


class GroupNorm2d(Module):
    """Per-sample statistics over (C/G, H, W) for each of G channel groups."""

    def __init__(self, channels: int, groups: int, eps: float = 1e-5):
        super().__init__()
        if channels % groups:
            raise ConfigError(f"{channels} channels not divisible into {groups} groups", field="norm.groups")
        self.channels = channels
        self.groups = groups
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError("GroupNorm2d", x.shape, (self.channels,))
        b, c, h, w = x.shape
        grouped = ops.reshape(x, (b, self.groups, (c // self.groups) * h * w))
        xhat, _, _ = ops.standardize(grouped, (2,), self.eps)
        return ops.channel_affine(ops.reshape(xhat, x.shape), self.gamma, self.beta)


class LayerNorm2d(GroupNorm2d):
    """Per-sample statistics over (C, H, W) with per-channel affine."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__(channels, 1, eps)


def make_norm(cfg: NormConfig, channels: int) -> Module | None:
    cfg.validate_channels(channels)
    if cfg.kind == "batch":
        return BatchNorm2d(channels, cfg.eps, cfg.momentum)
    if cfg.kind == "group":
        return GroupNorm2d(channels, cfg.groups, cfg.eps)
    if cfg.kind == "layer":
        return LayerNorm2d(channels, cfg.eps)
    return None


def norm_forward(x: Tensor, cfg: NormConfig, mode: str = "train", layer: Module | None = None) -> Tensor:
    """Normalize ``x`` with a fresh (gamma=1, beta=0) layer, or with ``layer`` if given."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got '{mode}'", field="mode")
    if layer is None:
        layer = make_norm(cfg, x.shape[1])
    if layer is None:
        return x
    layer.train(mode == "train")
    return layer(x)
