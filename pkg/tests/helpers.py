"""Shared test utilities (finite differences on module parameters, tiny configs)."""

import numpy as np

from anfr.autodiff import Tensor


def module_grad_error(module, loss_fn, names=None, h=1e-5, max_coords=40, seed=0):
    """Max relative error between backward and central differences for selected parameters.

    ``loss_fn(module)`` must build a fresh graph and return a scalar Tensor.
    At most ``max_coords`` randomly chosen coordinates are probed per parameter.
    """
    rng = np.random.default_rng(seed)
    params = dict(module.named_parameters())
    names = names or list(params)
    module.zero_grad()
    loss_fn(module).backward()
    worst = 0.0
    for name in names:
        p = params[name]
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        coords = rng.choice(flat.size, size=min(max_coords, flat.size), replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn(module).item()
            flat[i] = orig - h
            fm = loss_fn(module).item()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - num) / max(1.0, abs(a)))
    module.zero_grad()
    return worst


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)
