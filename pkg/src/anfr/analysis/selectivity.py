"""Class-conditional activations, class selectivity index and attention statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..data.datasets import Dataset
from ..errors import ConfigError

NUM_BINS = 64
DEGENERACY_TOL = 0.02


def default_probes(model) -> list[str]:
    probes = []
    for name in model.block_names:
        probes += [f"{name}.pre_attention", f"{name}.post_attention"]
    return probes


def _class_members(dataset: Dataset, c: int) -> np.ndarray:
    if dataset.multilabel:
        return dataset.labels[:, c] > 0.5
    return dataset.labels == c


def capture_class_conditional(model, dataset: Dataset, probes: list[str] | None = None,
                              batch_size: int = 256) -> dict[str, np.ndarray]:
    """``mu[probe][class, channel]``: per-class mean of spatially averaged probe activations.

    One eval-mode pass in dataset order; per-class sums are accumulated in
    that order and divided once at the end.
    """
    probes = probes if probes is not None else default_probes(model)
    counts = np.array([_class_members(dataset, c).sum() for c in range(dataset.num_classes)])
    if (counts == 0).any():
        raise ConfigError(f"classes {np.flatnonzero(counts == 0).tolist()} have no samples", field="analysis")
    sums: dict[str, np.ndarray] = {}
    was_training = model.training
    model.eval()
    try:
        for start in range(0, len(dataset), batch_size):
            sl = slice(start, start + batch_size)
            capture: dict = {}
            model.forward(dataset.images[sl], capture)
            missing = [p for p in probes if p not in capture]
            if missing:
                raise ConfigError(f"model exposes no probe(s) {missing}", field="analysis.probes")
            if dataset.multilabel:
                member = dataset.labels[sl].astype(np.float64)
            else:
                member = np.eye(dataset.num_classes)[dataset.labels[sl]]
            for p in probes:
                act = capture[p]
                pooled = act.mean(axis=(2, 3)) if act.ndim == 4 else act
                part = member.T @ pooled
                sums[p] = part if p not in sums else sums[p] + part
    finally:
        model.train(was_training)
    return {p: s / counts[:, None] for p, s in sums.items()}


def csi(mu) -> np.ndarray | float:
    """Class selectivity over the last axis: ``(mu_max - mu_rest) / (mu_max + mu_rest)``.

    ``mu_rest`` is the mean over the non-argmax classes. A zero denominator
    (a dead neuron) gives 0.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape[-1] < 2:
        raise ConfigError("class selectivity needs at least two classes", field="analysis")
    ordered = np.sort(mu, axis=-1)
    top = ordered[..., -1]
    # mean of the remaining entries directly; total-minus-max leaves rounding residue on constant rows
    rest = np.minimum(ordered[..., :-1].mean(axis=-1), top)
    den = top + rest
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den != 0, (top - rest) / np.where(den != 0, den, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class CsiRecord:
    layer: str
    values: np.ndarray
    model_id: str = ""
    phase: str = "post_fl"


def csi_records(mu_by_probe: dict[str, np.ndarray], model_id: str = "", phase: str = "post_fl") -> list[CsiRecord]:
    if phase not in ("pre_fl", "post_fl"):
        raise ConfigError(f"phase must be pre_fl or post_fl, got '{phase}'", field="analysis.phase")
    return [CsiRecord(p, csi(mu.T), model_id, phase) for p, mu in mu_by_probe.items()]


def moment_skewness(values) -> float:
    """Population skewness ``m3 / m2**1.5``; 0 for a constant sample."""
    x = np.asarray(values, dtype=np.float64)
    d = x - x.mean()
    m2 = (d * d).mean()
    if m2 == 0:
        return 0.0
    return float((d ** 3).mean() / m2 ** 1.5)


@dataclass
class CsiDistribution:
    layer: str
    counts: np.ndarray
    edges: np.ndarray
    grid: np.ndarray
    density: np.ndarray | None
    skewness: float
    mean: float


def csi_distribution(values, layer: str = "", grid_points: int = 200) -> CsiDistribution:
    """64-bin histogram on [0, 1], Silverman-bandwidth Gaussian KDE and skewness."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if not len(x):
        raise ConfigError("csi_distribution needs at least one value", field="analysis")
    counts, edges = np.histogram(np.clip(x, 0.0, 1.0), bins=NUM_BINS, range=(0.0, 1.0))
    grid = np.linspace(0.0, 1.0, grid_points)
    density = None
    if len(x) > 1 and np.ptp(x) > 0:
        density = stats.gaussian_kde(x, bw_method="silverman")(grid)
    return CsiDistribution(layer, counts, edges, grid, density, moment_skewness(x), float(x.mean()))


@dataclass
class AttentionRecord:
    layer: str
    mean: np.ndarray        # [class, channel] mean gate value
    variability: float      # std over (class, channel)
    degenerate: bool


def is_degenerate(mean: np.ndarray, tol: float = DEGENERACY_TOL) -> bool:
    """True when every entry lies within ``tol`` of one common value."""
    return bool(np.ptp(mean) <= 2 * tol)


def attention_stats(model, dataset: Dataset, batch_size: int = 256) -> list[AttentionRecord]:
    layers = model.attention_block_names
    if not layers:
        raise ConfigError("model has no attention blocks", field="analysis")
    mu = capture_class_conditional(model, dataset, [f"{n}.attention" for n in layers], batch_size)
    out = []
    for n in layers:
        m = mu[f"{n}.attention"]
        out.append(AttentionRecord(n, m, float(m.std()), is_degenerate(m)))
    return out


def attention_degenerate(records: list[AttentionRecord]) -> bool:
    """Model-level flag, read at the deepest attention layer."""
    return records[-1].degenerate


def write_attention_csv(records: list[AttentionRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "class", "channel", "value"])
        for r in records:
            for c in range(r.mean.shape[0]):
                for ch in range(r.mean.shape[1]):
                    w.writerow([r.layer, c, ch, repr(float(r.mean[c, ch]))])


def write_histogram_csv(dists: list[CsiDistribution], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "bin", "lower", "upper", "count"])
        for d in dists:
            for b in range(len(d.counts)):
                w.writerow([d.layer, b, repr(float(d.edges[b])), repr(float(d.edges[b + 1])), int(d.counts[b])])
