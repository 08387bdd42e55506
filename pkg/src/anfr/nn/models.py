"""Toy residual networks for the five compared architectures.

``bn_resnet``, ``gn_resnet`` and ``se_resnet`` use post-activation basic
blocks with activation normalization. ``nf_resnet`` and ``anfr`` use
pre-activation normalizer-free blocks built from scaled weight-standardized
convolutions: each block computes ``h + alpha * f(relu(h) / beta)`` where
``beta`` is the analytically tracked standard deviation of ``h``. ``anfr``
and ``se_resnet`` place the attention block after the last conv of the
residual branch, before the residual add.

Downsampling blocks use a 4x4 stride-2 conv in the branch and a 2x2 stride-2
projection so every output extent is an exact integer.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import Tensor, ops
from ..errors import ConfigError
from .attention import AttentionConfig, make_attention
from .layers import Conv2d, Linear
from .module import Module
from .norm import NormConfig, make_norm
from .sws import ScaledStdConv2d, gamma_for_nonlinearity

ARCHITECTURES = ("bn_resnet", "gn_resnet", "se_resnet", "nf_resnet", "anfr")
_NORM_OF = {"bn_resnet": "batch", "se_resnet": "batch", "gn_resnet": "group", "nf_resnet": "none", "anfr": "none"}


@dataclass(frozen=True)
class ModelSpec:
    architecture: str = "anfr"
    widths: tuple[int, ...] = (16, 32, 64)
    depths: tuple[int, ...] = (2, 2, 2)
    num_classes: int = 10
    in_channels: int = 3
    image_size: int = 16
    attention: str = "se"
    reduction: int = 4
    eca_kernel: int = 3
    groups: int = 8
    alpha: float = 0.2
    norm: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture '{self.architecture}'", field="model.architecture")
        expected = _NORM_OF[self.architecture]
        if self.norm is None:
            object.__setattr__(self, "norm", expected)
        elif self.norm != expected:
            raise ConfigError(f"architecture '{self.architecture}' requires norm '{expected}', got '{self.norm}'",
                              field="model.norm")
        if self.architecture == "se_resnet" and self.attention != "se":
            raise ConfigError("se_resnet always uses squeeze-and-excitation attention", field="model.attention")
        AttentionConfig(self.attention, self.reduction, self.eca_kernel)
        if len(self.widths) != len(self.depths) or not self.widths:
            raise ConfigError("widths and depths must be non-empty and of equal length", field="model.widths")
        if any(w < 1 for w in self.widths) or any(d < 1 for d in self.depths):
            raise ConfigError("widths and depths must be positive", field="model.widths")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes", field="model.num_classes")
        if self.image_size % (2 ** (len(self.widths) - 1)):
            raise ConfigError(f"image_size {self.image_size} must be divisible by 2^{len(self.widths) - 1}",
                              field="model.image_size")
        if self.norm == "group":
            for w in self.widths:
                NormConfig("group", self.groups).validate_channels(w)
        if not 0.0 < self.alpha:
            raise ConfigError("alpha must be positive", field="model.alpha")

    @property
    def attention_kind(self) -> str:
        if self.architecture == "se_resnet":
            return "se"
        if self.architecture == "anfr":
            return self.attention
        return "none"

    @property
    def normalizer_free(self) -> bool:
        return self.norm == "none"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["depths"] = list(self.depths)
        return d


def _norm_name(kind: str) -> str:
    return {"batch": "bn", "group": "gn", "layer": "ln"}[kind]


def _branch_geometry(stride: int) -> tuple[int, int]:
    # (kernel, padding) of the first branch conv; 4x4/s2/p1 halves even extents exactly
    return (4, 1) if stride == 2 else (3, 1)


class NormBasicBlock(Module):
    """Post-activation block: relu(attn(norm(conv(relu(norm(conv(h)))))) + shortcut)."""

    def __init__(self, cin: int, cout: int, stride: int, spec: ModelSpec, rng: np.random.Generator):
        super().__init__()
        ncfg = NormConfig(spec.norm, spec.groups)
        k, p = _branch_geometry(stride)
        tag = _norm_name(spec.norm)
        self.conv1 = Conv2d(cin, cout, k, stride, p, rng=rng)
        setattr(self, f"{tag}1", make_norm(ncfg, cout))
        self.conv2 = Conv2d(cout, cout, 3, 1, 1, rng=rng)
        setattr(self, f"{tag}2", make_norm(ncfg, cout))
        attn = make_attention(AttentionConfig(spec.attention_kind, spec.reduction, spec.eca_kernel), cout, rng)
        if attn is not None:
            self.attn = attn
        self.has_projection = stride != 1 or cin != cout
        if self.has_projection:
            self.proj = Conv2d(cin, cout, stride, stride, 0, rng=rng)
            setattr(self, f"{tag}_proj", make_norm(ncfg, cout))
        self._tag = tag

    def forward(self, h: Tensor, capture: dict | None = None, prefix: str = "") -> Tensor:
        tag = self._tag
        y = ops.relu(self._children[f"{tag}1"](self.conv1(h)))
        if capture is not None:
            capture[f"{prefix}.pre_attention"] = y.data
        y = self._children[f"{tag}2"](self.conv2(y))
        if "attn" in self._children:
            y, s = self.attn(y)
            if capture is not None:
                capture[f"{prefix}.attention"] = s.data
        sc = self._children[f"{tag}_proj"](self.proj(h)) if self.has_projection else h
        out = ops.relu(ops.add(y, sc))
        if capture is not None:
            capture[f"{prefix}.post_attention"] = out.data
        return out


class NFBlock(Module):
    """Pre-activation normalizer-free block: h + alpha * attn(conv(relu(conv(relu(h)/beta))))."""

    def __init__(self, cin: int, cout: int, stride: int, beta: float, spec: ModelSpec, rng: np.random.Generator):
        super().__init__()
        g = gamma_for_nonlinearity("relu")
        k, p = _branch_geometry(stride)
        self.beta = beta
        self.alpha = spec.alpha
        self.conv1 = ScaledStdConv2d(cin, cout, k, stride, p, gamma=g, rng=rng)
        self.conv2 = ScaledStdConv2d(cout, cout, 3, 1, 1, gamma=g, rng=rng)
        attn = make_attention(AttentionConfig(spec.attention_kind, spec.reduction, spec.eca_kernel), cout, rng)
        if attn is not None:
            self.attn = attn
        self.has_projection = stride != 1 or cin != cout
        if self.has_projection:
            self.proj = ScaledStdConv2d(cin, cout, stride, stride, 0, gamma=g, rng=rng)

    def forward(self, h: Tensor, capture: dict | None = None, prefix: str = "") -> Tensor:
        x = ops.scale(ops.relu(h), 1.0 / self.beta)
        y = ops.relu(self.conv1(x))
        if capture is not None:
            capture[f"{prefix}.pre_attention"] = y.data
        y = self.conv2(y)
        if "attn" in self._children:
            y, s = self.attn(y)
            if capture is not None:
                capture[f"{prefix}.attention"] = s.data
        sc = self.proj(x) if self.has_projection else h
        out = ops.add(sc, ops.scale(y, self.alpha))
        if capture is not None:
            capture[f"{prefix}.post_attention"] = np.maximum(out.data, 0.0)
        return out


class ResNet(Module):
    """Stem -> residual stages -> GAP -> linear classifier."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        self.seed = seed
        rng = np.random.default_rng(seed)
        w0 = spec.widths[0]
        if spec.normalizer_free:
            self.stem = ScaledStdConv2d(spec.in_channels, w0, 3, 1, 1, gamma=gamma_for_nonlinearity("identity"),
                                        rng=rng)
        else:
            self.stem = Conv2d(spec.in_channels, w0, 3, 1, 1, rng=rng)
            setattr(self, f"stem_{_norm_name(spec.norm)}", make_norm(NormConfig(spec.norm, spec.groups), w0))
        self.block_names: list[str] = []
        self.expected_var: list[float] = []
        var = 1.0
        cin = w0
        for si, (width, depth) in enumerate(zip(spec.widths, spec.depths)):
            for bi in range(depth):
                stride = 2 if (si > 0 and bi == 0) else 1
                name = f"stage{si + 1}_block{bi}"
                if spec.normalizer_free:
                    block = NFBlock(cin, width, stride, math.sqrt(var), spec, rng)
                    var = (1.0 if block.has_projection else var) + spec.alpha ** 2
                    self.expected_var.append(var)
                else:
                    block = NormBasicBlock(cin, width, stride, spec, rng)
                setattr(self, name, block)
                self.block_names.append(name)
                cin = width
        self.fc = Linear(cin, spec.num_classes, rng=rng)

    @property
    def attention_block_names(self) -> list[str]:
        return [n for n in self.block_names if "attn" in self._children[n]._children]

    def features(self, x, capture: dict | None = None) -> Tensor:
        """Final spatial feature map (post-activation) before pooling."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        h = self.stem(x)
        if not self.spec.normalizer_free:
            h = ops.relu(self._children[f"stem_{_norm_name(self.spec.norm)}"](h))
        if capture is not None:
            capture["stem"] = h.data
        for name in self.block_names:
            h = self._children[name](h, capture, name)
            if capture is not None:
                capture[f"{name}.output"] = h.data
        if self.spec.normalizer_free:
            h = ops.relu(h)
        return h

    def forward(self, x, capture: dict | None = None) -> Tensor:
        return self.fc(ops.global_avg_pool(self.features(x, capture)))

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Logits for ``x`` in eval mode; restores the previous mode afterwards."""
        was_training = self.training
        self.eval()
        try:
            out = [self.forward(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        finally:
            self.train(was_training)
        return np.concatenate(out, axis=0)

    def head_names(self) -> list[str]:
        return [n for n in self.parameter_names() if n.startswith("fc.")]

    def has_batch_norm(self) -> bool:
        return self.spec.norm == "batch"


Model = ResNet


def build_model(spec: ModelSpec, seed: int = 0) -> ResNet:
    return ResNet(spec, seed)
