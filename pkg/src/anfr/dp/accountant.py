"""Renyi DP accounting for the Poisson-subsampled Gaussian mechanism."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ..errors import ConfigError

DEFAULT_ORDERS = (1.25, 1.5) + tuple(float(a) for a in range(2, 513))


def _log_add(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = max(a, b), min(a, b)
    return hi + math.log1p(math.exp(lo - hi))


def _log_sub(a: float, b: float) -> float:
    if b == -math.inf:
        return a
    if b > a:
        raise ArithmeticError("log-space subtraction would go negative")
    if a == b:
        return -math.inf
    return a + math.log1p(-math.exp(b - a))


def _log_a_int(q: float, sigma: float, alpha: int) -> float:
    k = np.arange(alpha + 1, dtype=np.float64)
    log_binom = special.gammaln(alpha + 1) - special.gammaln(k + 1) - special.gammaln(alpha - k + 1)
    with np.errstate(divide="ignore"):
        terms = log_binom + k * math.log(q) + (alpha - k) * math.log1p(-q) + (k * k - k) / (2 * sigma ** 2)
    return float(special.logsumexp(terms))


def _log_a_frac(q: float, sigma: float, alpha: float) -> float:
    # two-sided series split at z0, each half weighted by a Gaussian tail
    log_a0, log_a1 = -math.inf, -math.inf
    z0 = sigma ** 2 * math.log(1.0 / q - 1.0) + 0.5
    log_q, log_1q = math.log(q), math.log1p(-q)
    i = 0
    while True:
        coef = special.binom(alpha, i)
        log_coef = math.log(abs(coef))
        j = alpha - i
        log_s0 = (log_coef + i * log_q + j * log_1q + (i * i - i) / (2 * sigma ** 2)
                  + special.log_ndtr((z0 - i) / sigma))
        log_s1 = (log_coef + j * log_q + i * log_1q + (j * j - j) / (2 * sigma ** 2)
                  + special.log_ndtr((j - z0) / sigma))
        if coef > 0:
            log_a0, log_a1 = _log_add(log_a0, log_s0), _log_add(log_a1, log_s1)
        else:
            log_a0, log_a1 = _log_sub(log_a0, log_s0), _log_sub(log_a1, log_s1)
        i += 1
        if max(log_s0, log_s1) < -30 or i > 10_000:
            break
    return _log_add(log_a0, log_a1)


def rdp_subsampled_gaussian(q: float, sigma: float, alpha: float) -> float:
    """RDP of one step of the sampled Gaussian mechanism at order ``alpha``."""
    if not 0.0 <= q <= 1.0:
        raise ConfigError(f"sample rate must lie in [0, 1], got {q}", field="dp.sample_rate")
    if sigma <= 0:
        raise ConfigError("noise multiplier must be positive", field="dp.noise_multiplier")
    if alpha <= 1:
        raise ConfigError(f"RDP order must exceed 1, got {alpha}", field="dp.orders")
    if q == 0:
        return 0.0
    if q == 1.0:
        return alpha / (2 * sigma ** 2)
    if float(alpha).is_integer():
        log_a = _log_a_int(q, sigma, int(alpha))
    else:
        log_a = _log_a_frac(q, sigma, float(alpha))
    return log_a / (alpha - 1)


def rdp_to_epsilon(orders, rdp, delta: float) -> tuple[float, float]:
    """Tightest (eps, order) over the grid using the refined RDP-to-DP conversion."""
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}", field="dp.delta")
    a = np.asarray(orders, dtype=np.float64)
    r = np.asarray(rdp, dtype=np.float64)
    eps = r + np.log1p(-1.0 / a) - (math.log(delta) + np.log(a)) / (a - 1.0)
    eps = np.where(np.isfinite(eps), eps, np.inf)
    best = int(np.argmin(eps))
    return max(float(eps[best]), 0.0), float(a[best])


@dataclass
class PrivacyLedger:
    noise_multiplier: float
    sample_rate: float
    steps: int = 0
    orders: tuple[float, ...] = DEFAULT_ORDERS
    _per_step: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 < self.sample_rate <= 1.0:
            raise ConfigError(f"sample rate must lie in (0, 1], got {self.sample_rate}", field="dp.sample_rate")
        if self.noise_multiplier <= 0:
            raise ConfigError("noise multiplier must be positive", field="dp.noise_multiplier")
        if not len(self.orders) or min(self.orders) <= 1:
            raise ConfigError("order grid must be non-empty with every order > 1", field="dp.orders")
        self.orders = tuple(float(a) for a in self.orders)

    @property
    def per_step(self) -> np.ndarray:
        if self._per_step is None:
            self._per_step = np.array([rdp_subsampled_gaussian(self.sample_rate, self.noise_multiplier, a)
                                       for a in self.orders])
        return self._per_step

    @property
    def rdp(self) -> np.ndarray:
        """Accumulated RDP per order (composition is additive)."""
        return self.steps * self.per_step

    def step(self, n: int = 1) -> None:
        self.steps += n

    def to_dict(self) -> dict:
        return {"noise_multiplier": self.noise_multiplier, "sample_rate": self.sample_rate, "steps": self.steps,
                "orders": list(self.orders), "rdp": [float(v) for v in self.rdp]}


def rdp_epsilon(ledger: PrivacyLedger, delta: float) -> tuple[float, float]:
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}", field="dp.delta")
    if ledger.steps == 0:
        return 0.0, ledger.orders[0]
    return rdp_to_epsilon(ledger.orders, ledger.rdp, delta)
