"""Client optimizers and learning-rate schedules with persistable state."""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError

OPTIMIZERS = ("sgd", "adam")
SCHEDULERS = ("none", "cosine", "onecycle")


def lr_at(kind: str, base_lr: float, step: int, total_steps: int) -> float:
    """Learning rate for global step ``step`` (0-based) of ``total_steps``."""
    if kind == "none" or total_steps <= 0:
        return base_lr
    frac = min(step, total_steps) / total_steps
    if kind == "cosine":
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
    if kind == "onecycle":
        warm = 0.3
        start, end = base_lr / 25.0, base_lr / 1e4
        if frac < warm:
            return start + (base_lr - start) * frac / warm
        t = (frac - warm) / (1.0 - warm)
        return end + (base_lr - end) * 0.5 * (1.0 + math.cos(math.pi * t))
    raise ConfigError(f"unknown scheduler '{kind}'", field="fed.scheduler")


class SGD:
    def __init__(self, momentum: float = 0.0, weight_decay: float = 0.0):
        if not 0.0 <= momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)", field="fed.momentum")
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.state: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        for name, p in params.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.momentum:
                buf = self.state.get(name)
                buf = g.copy() if buf is None else self.momentum * buf + g
                self.state[name] = buf
                g = buf
            p.data = p.data - lr * g

    def state_dict(self) -> dict:
        return {k: v.copy() for k, v in self.state.items()}

    def load_state_dict(self, state: dict) -> None:
        self.state = {k: np.array(v) for k, v in state.items()}


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.state: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self.state.get(f"{name}.m", np.zeros_like(g))
            v = self.state.get(f"{name}.v", np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.state[f"{name}.m"], self.state[f"{name}.v"] = m, v
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        out = {k: v.copy() for k, v in self.state.items()}
        out["__t__"] = np.array(float(self.t))
        return out

    def load_state_dict(self, state: dict) -> None:
        state = dict(state)
        self.t = int(state.pop("__t__", 0))
        self.state = {k: np.array(v) for k, v in state.items()}


def make_optimizer(kind: str, momentum: float = 0.0, weight_decay: float = 0.0):
    if kind == "sgd":
        return SGD(momentum, weight_decay)
    if kind == "adam":
        return Adam(weight_decay=weight_decay)
    raise ConfigError(f"unknown optimizer '{kind}'", field="fed.optimizer")
