#!/usr/bin/env python3
"""Class selectivity and attention-gate statistics before and after federated training.

Run: python demos/04_attention_selectivity.py
"""

import numpy as np

from anfr.analysis import attention_degenerate, attention_stats, capture_class_conditional, csi_distribution, csi
from anfr.data import gen_colorshift, standardize_inputs, train_test_split
from anfr.fed import FedConfig, run_federation
from anfr.nn import ModelSpec, build_model

print("csi of [0.75, 0.25, 0.25] =", csi([0.75, 0.25, 0.25]))

ds, shards = gen_colorshift(4, 10, 150, 0.9, image_size=16, seed=2)
ds = standardize_inputs(ds)
split = [train_test_split(s, 1 / 3, 2, ds.labels) for s in shards]
train, test = [a for a, _ in split], [b for _, b in split]
test_ds = ds.subset(np.concatenate([t.indices for t in test]))
cfg = FedConfig(rounds=15, local_steps=5, batch_size=16, lr=0.3)

for arch in ("se_resnet", "anfr"):
    spec = ModelSpec(arch, widths=(8, 16, 32), depths=(1, 1, 1), image_size=16, groups=4)
    res = run_federation(spec, ds, train, cfg, test)
    before = build_model(spec, 0)
    before.load_state_dict(res.initial_state)
    for phase, model in (("before", before), ("after", res.global_model())):
        mu = capture_class_conditional(model, test_ds)
        last = f"{model.block_names[-1]}.post_attention"
        d = csi_distribution(csi(mu[last].T))
        recs = attention_stats(model, test_ds)
        print(f"{arch:<9} {phase:<6} csi mean {d.mean:.3f} skew {d.skewness:+.3f} | gate std "
              + " ".join(f"{r.variability:.3f}" for r in recs)
              + f" | degenerate {attention_degenerate(recs)}")

# a gate pushed into saturation is an identity map: every weight sits at 1
stub = build_model(ModelSpec("se_resnet", widths=(8, 16, 32), depths=(1, 1, 1), image_size=16), 0)
state = stub.state_dict()
for b in stub.attention_block_names:
    state[f"{b}.attn.fc2.weight"][:] = 0.0
    state[f"{b}.attn.fc2.bias"][:] = 15.0
stub.load_state_dict(state)
print("saturated stub degenerate:", attention_degenerate(attention_stats(stub, test_ds)))
