#!/usr/bin/env python3
"""Signal propagation through normalized and normalizer-free residual stacks.

Run: python demos/01_signal_propagation.py
"""

import numpy as np

from anfr.autodiff import Tensor
from anfr.nn import RELU_GAMMA, ModelSpec, OneByOneLayer, ScaledStdConv2d, build_model, gap_closed_form

rng = np.random.default_rng(0)

# %% A standardized kernel has zero-mean rows, whatever the raw weights look like
conv = ScaledStdConv2d(16, 8, 3, gamma=RELU_GAMMA, rng=rng)
conv.weight.data = conv.weight.data * 40 + 3.0          # deliberately badly scaled
w = conv.standardized_weight().data.reshape(8, -1)
print("row means   ", np.abs(w.mean(axis=1)).max())
print("row std*sqrt(fan_in)", (w.std(axis=1) * np.sqrt(w.shape[1])).round(4))

# relu after the conv keeps unit second moment for unit gaussian input
x = rng.standard_normal((4000, 16, 3, 3))
y = np.maximum(conv(Tensor(x)).data, 0)
print("var(relu(conv(x)))", y.var().round(3))

# %% Per-block output variance: BN renormalizes every block, NF relies on the
# analytic scaling and ANFR adds a gate on top of it
images = rng.standard_normal((64, 3, 16, 16))
for arch in ("bn_resnet", "nf_resnet", "anfr"):
    model = build_model(ModelSpec(arch, num_classes=10, image_size=16), 0)
    cap = {}                                  # training mode: BN uses batch statistics
    model.forward(images, cap)
    var = [cap[f"{b}.output"].var() for b in model.block_names]
    print(f"{arch:<10}", " ".join(f"{v:5.2f}" for v in var))

# %% What the pooled descriptor sees: with BN the descriptor depends on batch
# statistics; with SWS it is a per-sample affine function of the input mean
for kind in ("batch", "sws"):
    layer = OneByOneLayer(kind, rng.normal(size=(4, 6, 1, 1)), np.ones(4), np.zeros(4), gamma_nl=RELU_GAMMA)
    batch = rng.normal(1.0, 2.0, size=(8, 6, 5, 5))
    alone, _ = gap_closed_form(batch[:2], layer)
    together, closed = gap_closed_form(batch, layer)
    print(kind, "closed form error", np.abs(together - closed).max(),
          "| sample 0 changes with batch:", not np.allclose(alone[0], together[0]))
