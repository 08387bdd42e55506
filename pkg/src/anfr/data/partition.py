"""Label-skew, quantity-skew and feature-shift partitioners."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, PartitionError
from .datasets import ClientShard, Dataset, label_histogram, make_shard

SCHEMES = ("dirichlet", "k_classes", "quantity_skew", "feature_shift", "iid")
MAX_RETRIES = 100


@dataclass(frozen=True)
class PartitionConfig:
    scheme: str = "dirichlet"
    alpha: float = 0.5
    k: int = 2
    skew_exponent: float = 1.0
    shift_strength: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown partition scheme '{self.scheme}'", field="partition.scheme")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}", field="partition.alpha")
        if self.k < 1:
            raise ConfigError(f"k must be at least 1, got {self.k}", field="partition.k")
        if self.skew_exponent < 0:
            raise ConfigError("skew_exponent must be non-negative", field="partition.skew_exponent")
        if not 0.0 <= self.shift_strength <= 1.0:
            raise ConfigError("shift_strength must lie in [0, 1]", field="partition.shift_strength")


def _class_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    # multi-label targets are partitioned by their first positive class (or 0 when none)
    return labels.argmax(axis=1) if labels.ndim == 2 else labels.astype(np.int64)


def _num_classes(labels: np.ndarray, num_classes: int | None) -> int:
    if num_classes is not None:
        return num_classes
    labels = np.asarray(labels)
    return labels.shape[1] if labels.ndim == 2 else int(labels.max()) + 1


def largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``weights`` that sums to ``total`` exactly."""
    w = np.asarray(weights, dtype=np.float64)
    quota = total * w / w.sum()
    counts = np.floor(quota).astype(np.int64)
    short = total - counts.sum()
    if short:
        # ties go to the lower index; stable sort keeps that deterministic
        order = np.argsort(-(quota - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _shards(assign: list[list[np.ndarray]], labels, num_classes) -> list[ClientShard]:
    return [make_shard(i, np.concatenate(parts) if parts else np.empty(0, np.int64), labels, num_classes)
            for i, parts in enumerate(assign)]


def partition_dirichlet(labels, num_clients: int, alpha: float, seed: int = 0,
                        num_classes: int | None = None) -> list[ClientShard]:
    """Per class, split its samples across clients in proportions drawn from Dir(alpha).

    Draws that leave any client without samples are rejected and redrawn.
    """
    if num_clients < 1:
        raise PartitionError("num_clients must be positive")
    if not alpha > 0:
        raise ConfigError(f"alpha must be positive, got {alpha}", field="partition.alpha")
    cls = _class_labels(labels)
    nc = _num_classes(labels, num_classes)
    if len(cls) < num_clients:
        raise PartitionError(f"{len(cls)} samples cannot fill {num_clients} non-empty shards")
    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(cls == c) for c in range(nc)]
    for _ in range(MAX_RETRIES):
        assign: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        for idx in by_class:
            if not len(idx):
                continue
            p = rng.dirichlet(np.full(num_clients, alpha))
            counts = largest_remainder(len(idx), p)
            cuts = np.cumsum(counts)[:-1]
            for i, part in enumerate(np.split(rng.permutation(idx), cuts)):
                assign[i].append(part)
        sizes = [sum(len(p) for p in parts) for parts in assign]
        if min(sizes) > 0:
            return _shards(assign, labels, nc)
    raise PartitionError(f"no Dirichlet draw left every client non-empty after {MAX_RETRIES} retries "
                         f"(alpha={alpha}, clients={num_clients})")


def partition_k_classes(labels, num_clients: int, k: int, seed: int = 0,
                        num_classes: int | None = None) -> list[ClientShard]:
    """Each client holds exactly ``k`` classes; owners of a class split its samples equally."""
    cls = _class_labels(labels)
    nc = _num_classes(labels, num_classes)
    if num_clients < 1:
        raise PartitionError("num_clients must be positive")
    if not 1 <= k <= nc:
        raise PartitionError(f"k={k} is infeasible for {nc} classes")
    if num_clients * k < nc:
        raise PartitionError(f"{num_clients} clients x {k} classes cannot cover {nc} classes")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(nc)
    owners: list[list[int]] = [[] for _ in range(nc)]
    for i in range(num_clients):
        for j in range(k):
            owners[perm[(i * k + j) % nc]].append(i)
    assign: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    for c in range(nc):
        idx = rng.permutation(np.flatnonzero(cls == c))
        if len(idx) < len(owners[c]):
            raise PartitionError(f"class {c} has {len(idx)} samples for {len(owners[c])} owners")
        for owner, part in zip(owners[c], np.array_split(idx, len(owners[c]))):
            assign[owner].append(part)
    return _shards(assign, labels, nc)


def _stratified_order(cls: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample order in which every prefix has near-global label proportions."""
    keys = np.empty(len(cls))
    for c in np.unique(cls):
        idx = rng.permutation(np.flatnonzero(cls == c))
        keys[idx] = (np.arange(len(idx)) + rng.random()) / len(idx)
    return np.lexsort((np.arange(len(cls)), keys))


def partition_quantity_skew(labels, num_clients: int, skew_exponent: float, seed: int = 0,
                            num_classes: int | None = None) -> list[ClientShard]:
    """Shard sizes proportional to ``rank ** -skew_exponent``; labels stratified within shards."""
    if num_clients < 2:
        raise PartitionError("quantity skew needs at least two clients")
    cls = _class_labels(labels)
    nc = _num_classes(labels, num_classes)
    sizes = largest_remainder(len(cls), np.arange(1, num_clients + 1, dtype=np.float64) ** -skew_exponent)
    if sizes.min() < 1:
        raise PartitionError(f"skew exponent {skew_exponent} leaves a shard empty with {len(cls)} samples")
    rng = np.random.default_rng(seed)
    order = _stratified_order(cls, rng)
    # contiguous blocks of the stratified stream: every block keeps near-global label proportions
    # (interleaving shards instead aliases with the stream's class period)
    owner = np.empty(len(cls), dtype=np.int64)
    owner[order] = np.repeat(np.arange(num_clients), sizes)
    return [make_shard(i, np.flatnonzero(owner == i), labels, nc) for i in range(num_clients)]


def partition_iid(labels, num_clients: int, seed: int = 0, num_classes: int | None = None) -> list[ClientShard]:
    return partition_quantity_skew(labels, num_clients, 0.0, seed, num_classes) if num_clients > 1 else \
        [make_shard(0, np.arange(len(labels)), labels, _num_classes(labels, num_classes))]


def partition(dataset: Dataset, num_clients: int, cfg: PartitionConfig) -> list[ClientShard]:
    if cfg.scheme == "dirichlet":
        return partition_dirichlet(dataset.labels, num_clients, cfg.alpha, cfg.seed, dataset.num_classes)
    if cfg.scheme == "k_classes":
        return partition_k_classes(dataset.labels, num_clients, cfg.k, cfg.seed, dataset.num_classes)
    if cfg.scheme == "quantity_skew":
        return partition_quantity_skew(dataset.labels, num_clients, cfg.skew_exponent, cfg.seed,
                                       dataset.num_classes)
    if cfg.scheme == "iid":
        return partition_iid(dataset.labels, num_clients, cfg.seed, dataset.num_classes)
    if dataset.origin is None:
        raise PartitionError("feature_shift partitioning needs a generated dataset with per-sample origins")
    found = int(dataset.origin.max()) + 1
    if found != num_clients:
        raise PartitionError(f"dataset was generated for {found} clients, asked for {num_clients}")
    return [make_shard(i, np.flatnonzero(dataset.origin == i), dataset.labels, dataset.num_classes)
            for i in range(num_clients)]


@dataclass
class PartitionReport:
    histograms: np.ndarray      # [clients, classes]
    size_fractions: np.ndarray  # [clients]
    tv_distance: np.ndarray     # [clients, clients]


def partition_stats(shards: list[ClientShard], labels, num_classes: int | None = None) -> PartitionReport:
    nc = _num_classes(labels, num_classes)
    labels = np.asarray(labels)
    hist = np.stack([label_histogram(labels[s.indices], nc) for s in shards]).astype(np.int64)
    sizes = np.array([s.size for s in shards], dtype=np.float64)
    dist = hist / np.maximum(hist.sum(axis=1, keepdims=True), 1)
    tv = 0.5 * np.abs(dist[:, None, :] - dist[None, :, :]).sum(axis=2)
    return PartitionReport(hist, sizes / sizes.sum(), tv)


def validate_shards(shards: list[ClientShard], n: int) -> None:
    """Raise unless shards are non-empty, pairwise disjoint and cover ``range(n)``."""
    seen = np.zeros(n, dtype=np.int64)
    for s in shards:
        if s.size == 0:
            raise PartitionError(f"client {s.client_id} has an empty shard")
        if s.indices.min() < 0 or s.indices.max() >= n:
            raise PartitionError(f"client {s.client_id} indexes outside the dataset")
        seen[s.indices] += 1
    if (seen > 1).any():
        raise PartitionError(f"{int((seen > 1).sum())} samples assigned to more than one client")
    if (seen == 0).any():
        raise PartitionError(f"{int((seen == 0).sum())} samples assigned to no client")


def write_shard_index(shards: list[ClientShard], path) -> None:
    """One line per client: ``<client_id>: <sorted indices separated by spaces>``."""
    lines = [f"{s.client_id}: {' '.join(str(int(i)) for i in s.indices)}" for s in shards]
    Path(path).write_text("\n".join(lines) + "\n")


def read_shard_index(path) -> dict[int, np.ndarray]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        head, _, rest = line.partition(":")
        try:
            out[int(head)] = np.array([int(t) for t in rest.split()], dtype=np.int64)
        except ValueError as exc:
            raise ConfigError(f"malformed shard index entry: {exc}", field="shard_index", line=lineno) from None
    return out


def train_test_split(shard: ClientShard, test_fraction: float, seed: int, labels) -> tuple[ClientShard, ClientShard]:
    """Stratified split of one shard into train and held-out test parts."""
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigError("test_fraction must lie in [0, 1)", field="data.test_fraction")
    labels = np.asarray(labels)
    nc = len(shard.label_hist)
    rng = np.random.default_rng([seed, shard.client_id, 104729])
    cls = _class_labels(labels[shard.indices])
    test = []
    for c in np.unique(cls):
        idx = rng.permutation(shard.indices[cls == c])
        test.append(idx[:int(round(test_fraction * len(idx)))])
    test_idx = np.concatenate(test) if test else np.empty(0, np.int64)
    train_idx = np.setdiff1d(shard.indices, test_idx)
    return make_shard(shard.client_id, train_idx, labels, nc), make_shard(shard.client_id, test_idx, labels, nc)
