"""Channel attention blocks: squeeze-and-excitation, ECA and CBAM.

Each block's ``forward`` returns ``(output, S)`` where ``S[B, C]`` is the
per-channel gate in (0, 1) so that analysis code can inspect it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, ops
from ..errors import ConfigError
from .layers import Linear
from .module import Module, Parameter, he_normal

ATTENTION_KINDS = ("se", "eca", "cbam", "none")


@dataclass(frozen=True)
class AttentionConfig:
    kind: str = "se"
    reduction: int = 4
    eca_kernel: int = 3
    spatial_kernel: int = 7

    def __post_init__(self):
        if self.kind not in ATTENTION_KINDS:
            raise ConfigError(f"unknown attention kind '{self.kind}'", field="attention.kind")
        if self.reduction < 1:
            raise ConfigError("reduction must be a positive integer", field="attention.reduction")
        if self.eca_kernel < 1 or self.eca_kernel % 2 == 0:
            raise ConfigError(f"ECA kernel must be odd and positive, got {self.eca_kernel}",
                              field="attention.eca_kernel")
        if self.spatial_kernel < 1 or self.spatial_kernel % 2 == 0:
            raise ConfigError("CBAM spatial kernel must be odd", field="attention.spatial_kernel")

    def hidden(self, channels: int) -> int:
        if self.reduction > channels:
            raise ConfigError(f"reduction {self.reduction} exceeds channel count {channels}",
                              field="attention.reduction")
        return max(1, channels // self.reduction)


def se_gate(z: Tensor, w1: Tensor, b1: Tensor | None, w2: Tensor, b2: Tensor | None) -> Tensor:
    """``sigmoid(W2 relu(W1 z))`` on a channel descriptor ``z[B, C]``."""
    return ops.sigmoid(ops.linear(ops.relu(ops.linear(z, w1, b1)), w2, b2))


def se_block(x: Tensor, w1: Tensor, b1: Tensor | None, w2: Tensor, b2: Tensor | None) -> tuple[Tensor, Tensor]:
    s = se_gate(ops.global_avg_pool(x), w1, b1, w2, b2)
    return ops.channel_scale(x, s), s


def eca_block(x: Tensor, kernel: Tensor) -> tuple[Tensor, Tensor]:
    if kernel.shape[0] % 2 == 0:
        raise ConfigError(f"ECA kernel must be odd, got {kernel.shape[0]}", field="attention.eca_kernel")
    s = ops.sigmoid(ops.conv1d_channels(ops.global_avg_pool(x), kernel))
    return ops.channel_scale(x, s), s


def cbam_block(x: Tensor, w1: Tensor, b1: Tensor | None, w2: Tensor, b2: Tensor | None,
               spatial_weight: Tensor, spatial_bias: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Channel gate from avg- and max-pooled descriptors, then a spatial gate."""
    k = spatial_weight.shape[-1]
    if k % 2 == 0:
        raise ConfigError(f"CBAM spatial kernel must be odd, got {k}", field="attention.spatial_kernel")

    def mlp(z):
        return ops.linear(ops.relu(ops.linear(z, w1, b1)), w2, b2)

    logits = ops.add(mlp(ops.global_avg_pool(x)), mlp(ops.global_max_pool(x)))
    s = ops.sigmoid(logits)
    x1 = ops.channel_scale(x, s)
    desc = ops.channel_pool(x1)
    m = ops.sigmoid(ops.conv2d(desc, spatial_weight, spatial_bias, stride=1, padding=k // 2))
    return ops.spatial_scale(x1, m), s


class SEBlock(Module):
    def __init__(self, channels: int, cfg: AttentionConfig, rng: np.random.Generator):
        super().__init__()
        hidden = cfg.hidden(channels)
        self.fc1 = Linear(channels, hidden, rng=rng)
        self.fc2 = Linear(hidden, channels, rng=rng)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        return se_block(x, self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias)


class ECABlock(Module):
    def __init__(self, channels: int, cfg: AttentionConfig, rng: np.random.Generator):
        super().__init__()
        k = cfg.eca_kernel
        self.kernel = Parameter(he_normal(rng, (k,), k))

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        return eca_block(x, self.kernel)


class CBAMBlock(Module):
    def __init__(self, channels: int, cfg: AttentionConfig, rng: np.random.Generator):
        super().__init__()
        hidden = cfg.hidden(channels)
        k = cfg.spatial_kernel
        self.fc1 = Linear(channels, hidden, rng=rng)
        self.fc2 = Linear(hidden, channels, rng=rng)
        self.spatial_weight = Parameter(he_normal(rng, (1, 2, k, k), 2 * k * k))
        self.spatial_bias = Parameter(np.zeros(1))

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        return cbam_block(x, self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias,
                          self.spatial_weight, self.spatial_bias)


def make_attention(cfg: AttentionConfig, channels: int, rng: np.random.Generator) -> Module | None:
    if cfg.kind == "se":
        return SEBlock(channels, cfg, rng)
    if cfg.kind == "eca":
        return ECABlock(channels, cfg, rng)
    if cfg.kind == "cbam":
        return CBAMBlock(channels, cfg, rng)
    return None
