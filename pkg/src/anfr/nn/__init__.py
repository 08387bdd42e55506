"""Layers, weight standardization, channel attention and the model zoo."""

from .attention import (AttentionConfig, CBAMBlock, ECABlock, SEBlock, cbam_block, eca_block, make_attention,
                        se_block, se_gate)
from .closed_form import OneByOneLayer, gap_closed_form
from .layers import Conv2d, Linear
from .models import ARCHITECTURES, Model, ModelSpec, ResNet, build_model
from .module import Module, Parameter
from .norm import BatchNorm2d, GroupNorm2d, LayerNorm2d, NormConfig, make_norm, norm_forward
from .sws import RELU_GAMMA, ScaledStdConv2d, SwsParams, gamma_for_nonlinearity, standardize_weight, sws_standardize

__all__ = [
    "AttentionConfig", "CBAMBlock", "ECABlock", "SEBlock", "cbam_block", "eca_block", "make_attention", "se_block",
    "se_gate", "OneByOneLayer", "gap_closed_form", "Conv2d", "Linear", "ARCHITECTURES", "Model", "ModelSpec",
    "ResNet", "build_model", "Module", "Parameter", "BatchNorm2d", "GroupNorm2d", "LayerNorm2d", "NormConfig",
    "make_norm", "norm_forward", "RELU_GAMMA", "ScaledStdConv2d", "SwsParams", "gamma_for_nonlinearity",
    "standardize_weight", "sws_standardize",
]
