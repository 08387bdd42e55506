#!/usr/bin/env python3
"""Privacy budgets and DP-SGD on batch-norm-free models.

Run: python demos/03_private_training.py
"""

import numpy as np

from anfr.data import gen_colorshift, standardize_inputs, train_test_split
from anfr.dp import DpConfig, PrivacyLedger, rdp_epsilon
from anfr.errors import ConfigError
from anfr.fed import FedConfig, run_federation
from anfr.nn import ModelSpec

# %% How epsilon grows with steps for a fixed sampling rate and noise
n = 33333
for steps in (100, 1000, 5000, 12500):
    eps, order = rdp_epsilon(PrivacyLedger(1.1, 64 / n, steps), 0.1 / n)
    print(f"steps {steps:>6}: eps = {eps:.3f} (order {order})")

# and with the noise multiplier
for z in (0.7, 1.1, 2.0):
    print(f"z = {z}: eps = {rdp_epsilon(PrivacyLedger(z, 64 / n, 12500), 0.1 / n)[0]:.3f}")

# %% Per-sample clipping needs per-sample gradients, which batch norm mixes
ds, shards = gen_colorshift(4, 10, 150, 0.9, image_size=16, seed=1)
ds = standardize_inputs(ds)
split = [train_test_split(s, 1 / 3, 1, ds.labels) for s in shards]
train, test = [a for a, _ in split], [b for _, b in split]
cfg = FedConfig(rounds=15, local_steps=5, batch_size=16, lr=0.3)
dp = DpConfig(clip_norm=1.0, noise_multiplier=1.1)

try:
    run_federation(ModelSpec("bn_resnet", widths=(8, 16, 32), depths=(1, 1, 1), image_size=16), ds, train, cfg,
                   test, dp=dp)
except ConfigError as exc:
    print("bn_resnet:", exc)

for arch in ("gn_resnet", "anfr"):
    spec = ModelSpec(arch, widths=(8, 16, 32), depths=(1, 1, 1), image_size=16, groups=4)
    plain = run_federation(spec, ds, train, cfg, test).metrics[-1].global_metrics["accuracy"]
    priv = run_federation(spec, ds, train, cfg, test, dp=dp)
    eps = np.mean(list(priv.metrics[-1].epsilon.values()))
    print(f"{arch:<10} plain {plain:.3f}  private {priv.metrics[-1].global_metrics['accuracy']:.3f}  "
          f"(mean client eps {eps:.2f})")
