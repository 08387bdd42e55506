"""Per-sample clipping, Gaussian noising and the private local step."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import ops
from ..errors import ConfigError
from .accountant import DEFAULT_ORDERS, PrivacyLedger


@dataclass(frozen=True)
class DpConfig:
    clip_norm: float = 1.0
    noise_multiplier: float = 1.1
    delta: float | None = None          # None -> delta_factor / |D_i| per client
    delta_factor: float = 0.1
    orders: tuple[float, ...] = DEFAULT_ORDERS

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive", field="dp.clip_norm")
        if not self.noise_multiplier > 0:
            raise ConfigError("noise_multiplier must be positive", field="dp.noise_multiplier")
        if self.delta is not None and not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1)", field="dp.delta")
        if not self.orders or min(self.orders) <= 1:
            raise ConfigError("order grid must be non-empty with every order > 1", field="dp.orders")

    def delta_for(self, dataset_size: int) -> float:
        return self.delta if self.delta is not None else self.delta_factor / dataset_size

    @property
    def noise_std(self) -> float:
        # an unbounded clip norm disables clipping; noise then falls back to a unit scale
        return self.noise_multiplier * (self.clip_norm if math.isfinite(self.clip_norm) else 1.0)


def clip_factors(grads: np.ndarray, clip_norm: float) -> np.ndarray:
    norms = np.sqrt((grads * grads).sum(axis=1))
    with np.errstate(divide="ignore"):
        return np.minimum(1.0, np.where(norms > 0, clip_norm / norms, 1.0))


def clip_per_sample(grads, clip_norm: float) -> np.ndarray:
    """Sum of per-sample gradients after scaling each by ``min(1, C / ||g||)``."""
    if not clip_norm > 0:
        raise ConfigError("clip_norm must be positive", field="dp.clip_norm")
    g = np.atleast_2d(np.asarray(grads, dtype=np.float64))
    return (g * clip_factors(g, clip_norm)[:, None]).sum(axis=0)


def noise_and_average(clipped_sum, noise_multiplier: float, clip_norm: float, batch_size: int,
                      seed=None) -> np.ndarray:
    if batch_size < 1:
        raise ConfigError("batch_size must be at least 1", field="dp.batch_size")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    clipped_sum = np.asarray(clipped_sum, dtype=np.float64)
    std = noise_multiplier * (clip_norm if math.isfinite(clip_norm) else 1.0)
    return (clipped_sum + rng.normal(0.0, std, clipped_sum.shape)) / batch_size


def per_sample_gradients(model, x: np.ndarray, y, loss_kind: str = "cross_entropy",
                         class_weights=None, focal_gamma: float = 2.0) -> tuple[np.ndarray, list[float]]:
    """``[B, P]`` flattened gradients from one backward pass per sample."""
    params = model.parameters()
    rows, losses = [], []
    for i in range(len(x)):
        model.zero_grad()
        out = model(x[i:i + 1])
        loss = ops.loss(out, y[i:i + 1], loss_kind, class_weights, focal_gamma)
        loss.backward()
        losses.append(loss.item())
        rows.append(np.concatenate([(p.grad if p.grad is not None else np.zeros_like(p.data)).ravel()
                                    for p in params]))
    model.zero_grad()
    return np.stack(rows), losses


def check_dp_eligible(model) -> None:
    if model.has_batch_norm():
        raise ConfigError("batch norm mixes samples within a batch, so it cannot be trained with "
                          "sample-level DP", field="dp")


def private_gradients(model, x, y, dp: DpConfig, rng: np.random.Generator, loss_kind: str = "cross_entropy",
                      class_weights=None, focal_gamma: float = 2.0) -> tuple[dict, float]:
    """Noisy mean of clipped per-sample gradients, unflattened per parameter name."""
    check_dp_eligible(model)
    grads, losses = per_sample_gradients(model, x, y, loss_kind, class_weights, focal_gamma)
    clip = dp.clip_norm
    clipped = grads.sum(axis=0) if not math.isfinite(clip) else clip_per_sample(grads, clip)
    noisy = noise_and_average(clipped, dp.noise_multiplier, clip, len(x), rng)
    out, at = {}, 0
    for name, p in model.named_parameters():
        out[name] = noisy[at:at + p.size].reshape(p.shape)
        at += p.size
    return out, float(np.mean(losses))


def dp_local_step(model, batch, optimizer, dp: DpConfig, ledger: PrivacyLedger, lr: float,
                  rng: np.random.Generator, loss_kind: str = "cross_entropy") -> float:
    """One private optimizer step; advances ``ledger`` by one step and returns the mean loss."""
    x, y = batch
    grads, loss = private_gradients(model, x, y, dp, rng, loss_kind)
    optimizer.step(dict(model.named_parameters()), grads, lr)
    ledger.step()
    return loss
