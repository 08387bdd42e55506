"""Server-side aggregation and parameter personalization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError
from ..nn.norm import BatchNorm2d

STRATEGIES = ("fedavg", "fedprox", "scaffold", "fedadam", "fedper", "fedbn")
PERSONALIZATION = {"fedper": "fedper", "fedbn": "fedbn"}


@dataclass
class ServerState:
    theta: dict[str, np.ndarray]
    round: int = 0
    c: dict[str, np.ndarray] | None = None               # scaffold server control variate
    c_clients: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)
    m: dict[str, np.ndarray] | None = None               # fedadam moments
    v: dict[str, np.ndarray] | None = None


def personal_names(model, strategy: str) -> list[str]:
    """Names (parameters and buffers) that stay on each client under ``strategy``."""
    if strategy in ("none", "fedavg", "fedprox", "scaffold", "fedadam"):
        return []
    if strategy == "fedper":
        return list(model.head_names())
    if strategy == "fedbn":
        names = []
        for mod_name, mod in model.named_modules():
            if isinstance(mod, BatchNorm2d):
                names += [f"{mod_name}.{n}" for n in list(mod._params) + list(mod._buffers)]
        if not names:
            raise ConfigError("fedbn keeps batch-norm state local, but this model has no batch-norm layers",
                              field="fed.aggregation")
        return names
    raise ConfigError(f"unknown personalization strategy '{strategy}'", field="fed.aggregation")


def personalization_filter(strategy: str, named_params, model=None) -> tuple[dict, dict]:
    """Split ``named_params`` into (shared, personal) dicts.

    ``model`` supplies the layer structure; without it the split falls back on
    the naming convention (``fc.*`` head, ``bn*``/``*_bn*`` segments).
    """
    named = dict(named_params)
    if model is not None:
        personal = set(personal_names(model, strategy))
    elif strategy == "fedper":
        personal = {n for n in named if n.startswith("fc.")}
    elif strategy == "fedbn":
        personal = {n for n in named if any(seg.startswith("bn") or "_bn" in seg for seg in n.split(".")[:-1])}
        if not personal:
            raise ConfigError("fedbn needs batch-norm layers", field="fed.aggregation")
    elif strategy in ("none",) + STRATEGIES:
        personal = set()
    else:
        raise ConfigError(f"unknown personalization strategy '{strategy}'", field="fed.aggregation")
    shared = {k: v for k, v in named.items() if k not in personal}
    return shared, {k: v for k, v in named.items() if k in personal}


def _check_shapes(updates: list[dict], reference: dict) -> None:
    for i, upd in enumerate(updates):
        for name, ref in reference.items():
            if name not in upd:
                raise ShapeError("aggregate", ref.shape, (), detail=f"client update {i} lacks '{name}'")
            if upd[name].shape != ref.shape:
                raise ShapeError("aggregate", ref.shape, upd[name].shape, detail=f"parameter '{name}'")


def weighted_mean(arrays: list[np.ndarray], sizes) -> np.ndarray:
    """``sum_i (n_i / N) x_i`` accumulated in client order; identical inputs come back unchanged."""
    if all(np.array_equal(arrays[0], a) for a in arrays[1:]):
        return arrays[0].copy()
    sizes = np.asarray(sizes, dtype=np.float64)
    total = sizes.sum()
    acc = np.zeros_like(arrays[0])
    for a, n in zip(arrays, sizes):
        acc += (n / total) * a
    return acc


def fedadam_update(theta: np.ndarray, mean: np.ndarray, m: np.ndarray, v: np.ndarray, lr: float,
                   beta1: float, beta2: float, eps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Server Adam step on the pseudo-gradient ``theta - mean`` (no bias correction)."""
    g = theta - mean
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    return theta - lr * m / (np.sqrt(v) + eps), m, v


def aggregate(updates: list[tuple[dict, int]], strategy: str, server: ServerState, personal: set | None = None,
              buffers: set | None = None, server_lr: float = 1e-2, beta1: float = 0.9, beta2: float = 0.99,
              eps: float = 1e-3, new_c: list[dict] | None = None, client_ids: list[int] | None = None,
              num_clients: int | None = None) -> dict[str, np.ndarray]:
    """New global parameters from ``(theta_i, |D_i|)`` client updates.

    ``personal`` names are left at their current global value. ``buffers``
    (running statistics) are always averaged directly, even under fedadam.
    For scaffold, ``new_c`` holds each participant's updated control variate.
    """
    if not updates:
        raise ConfigError("aggregation needs at least one client update", field="fed.participation")
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown aggregation '{strategy}'", field="fed.aggregation")
    personal = personal or set()
    buffers = buffers or set()
    thetas = [u for u, _ in updates]
    sizes = [n for _, n in updates]
    _check_shapes(thetas, server.theta)

    new = {}
    for name, cur in server.theta.items():
        if name in personal:
            new[name] = cur.copy()
            continue
        mean = weighted_mean([t[name] for t in thetas], sizes)
        if strategy == "fedadam" and name not in buffers:
            if server.m is None:
                server.m, server.v = {}, {}
            m = server.m.get(name, np.zeros_like(cur))
            v = server.v.get(name, np.zeros_like(cur))
            new[name], server.m[name], server.v[name] = fedadam_update(cur, mean, m, v, server_lr,
                                                                       beta1, beta2, eps)
        else:
            new[name] = mean

    if strategy == "scaffold" and new_c is not None:
        ids = client_ids if client_ids is not None else list(range(len(updates)))
        for cid, ci in zip(ids, new_c):
            server.c_clients[cid] = {k: v.copy() for k, v in ci.items()}
        server.c = scaffold_server_c(server.c_clients, server.c, num_clients)

    server.theta = new
    server.round += 1
    return new


def scaffold_server_c(c_clients: dict, c_old: dict | None, num_clients: int | None) -> dict:
    """Server control variate as the mean over all clients (unseen clients contribute zeros)."""
    ids = sorted(c_clients)
    n = max(num_clients or len(ids), len(ids))
    names = c_clients[ids[0]].keys()
    out = {}
    for name in names:
        parts = [c_clients[i][name] for i in ids]
        if len(ids) == n:
            out[name] = weighted_mean(parts, [1] * n)
        else:
            out[name] = sum(parts) / n
    return out
