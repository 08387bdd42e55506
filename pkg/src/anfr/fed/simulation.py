"""Round-based federated simulation: local training, aggregation, evaluation."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..autodiff import ops
from ..data.datasets import ClientShard, Dataset
from ..dp.accountant import PrivacyLedger, rdp_epsilon
from ..dp.mechanism import DpConfig, check_dp_eligible, private_gradients
from ..errors import ConfigError, TrainingError
from ..nn.models import ModelSpec, ResNet, build_model
from ..optim import OPTIMIZERS, SCHEDULERS, lr_at, make_optimizer
from .aggregate import STRATEGIES, ServerState, aggregate, personal_names

LOSSES = ("cross_entropy", "focal", "bce")


@dataclass(frozen=True)
class FedConfig:
    rounds: int = 30
    local_steps: int = 5
    batch_size: int = 16
    optimizer: str = "sgd"
    lr: float = 0.3
    momentum: float = 0.9
    weight_decay: float = 0.0
    scheduler: str = "cosine"
    aggregation: str = "fedavg"
    mu: float = 0.0
    server_lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.99
    server_eps: float = 1e-3
    participation: float = 1.0
    loss: str = "cross_entropy"
    focal_gamma: float = 2.0
    seed: int = 0
    workers: int = 1
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.rounds < 0 or self.local_steps < 0:
            raise ConfigError("rounds and local_steps must be non-negative", field="fed.rounds")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive", field="fed.batch_size")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer '{self.optimizer}'", field="fed.optimizer")
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"unknown scheduler '{self.scheduler}'", field="fed.scheduler")
        if self.aggregation not in STRATEGIES:
            raise ConfigError(f"unknown aggregation '{self.aggregation}'", field="fed.aggregation")
        if self.mu < 0:
            raise ConfigError(f"fedprox mu must be non-negative, got {self.mu}", field="fed.mu")
        if not 0.0 < self.participation <= 1.0:
            raise ConfigError("participation must lie in (0, 1]", field="fed.participation")
        if not self.lr > 0:
            raise ConfigError("lr must be positive", field="fed.lr")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss '{self.loss}'", field="fed.loss")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1", field="fed.workers")

    @property
    def total_steps(self) -> int:
        return self.rounds * self.local_steps


@dataclass
class ClientState:
    client_id: int
    train: ClientShard
    test: ClientShard | None = None
    seed: int = 0
    personal: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_state: dict = field(default_factory=dict)
    step: int = 0                         # scheduler position, persisted across rounds
    c: dict[str, np.ndarray] | None = None
    ledger: PrivacyLedger | None = None
    best_metric: float = -math.inf
    best_round: int = -1

    @property
    def num_samples(self) -> int:
        return self.train.size


@dataclass
class LocalResult:
    theta: dict[str, np.ndarray]
    num_samples: int
    losses: list[float]
    c_new: dict[str, np.ndarray] | None = None
    delta_c: dict[str, np.ndarray] | None = None


@dataclass
class RoundMetrics:
    round: int
    train_loss: dict[int, float]
    global_metrics: dict[str, float]
    local_metrics: dict[int, float]
    best_local: dict[int, float]
    participants: list[int]
    epsilon: dict[int, float] = field(default_factory=dict)
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def client_seed(seed: int, client_id: int) -> int:
    return int(np.random.SeedSequence([seed, client_id]).generate_state(1)[0])


def batch_indices(rng: np.random.Generator, n: int, batch_size: int) -> np.ndarray:
    return rng.choice(n, size=min(batch_size, n), replace=False)


def _targets(dataset: Dataset, idx):
    return dataset.labels[idx]


def batch_loss(model: ResNet, x, y, cfg: FedConfig):
    return ops.loss(model(x), y, cfg.loss, focal_gamma=cfg.focal_gamma)


def local_train(client: ClientState, theta_global: dict, cfg: FedConfig, model: ResNet, dataset: Dataset,
                round_idx: int, server_c: dict | None = None, personal: list[str] | None = None,
                dp: DpConfig | None = None) -> LocalResult:
    """Run ``cfg.local_steps`` optimizer steps on the client's shard, starting from the global model."""
    if client.train.size == 0:
        raise ConfigError(f"client {client.client_id} has no training samples", field="data")
    state = {k: v.copy() for k, v in theta_global.items()}
    for name in personal or ():
        if name in client.personal:
            state[name] = client.personal[name].copy()
    model.load_state_dict(state)
    model.train()

    params = dict(model.named_parameters())
    opt = make_optimizer(cfg.optimizer, cfg.momentum, cfg.weight_decay)
    opt.load_state_dict(client.optimizer_state)
    rng = np.random.default_rng([client.seed, round_idx])
    prox = cfg.aggregation == "fedprox" and cfg.mu > 0
    scaffold = cfg.aggregation == "scaffold"
    correction = None
    if scaffold and server_c is not None:
        ci = client.c if client.c is not None else {k: np.zeros_like(v) for k, v in server_c.items()}
        correction = {k: server_c[k] - ci[k] for k in server_c}
    if dp is not None:
        check_dp_eligible(model)
        if client.ledger is None:
            q = min(1.0, cfg.batch_size / client.train.size)
            client.ledger = PrivacyLedger(dp.noise_multiplier, q, orders=dp.orders)

    losses: list[float] = []
    lr_sum = 0.0
    for _ in range(cfg.local_steps):
        idx = client.train.indices[batch_indices(rng, client.train.size, cfg.batch_size)]
        x, y = dataset.images[idx], _targets(dataset, idx)
        lr = lr_at(cfg.scheduler, cfg.lr, client.step, cfg.total_steps)
        if dp is not None:
            grads, loss_value = private_gradients(model, x, y, dp, rng, cfg.loss, focal_gamma=cfg.focal_gamma)
            client.ledger.step()
        else:
            model.zero_grad()
            loss = batch_loss(model, x, y, cfg)
            loss.backward()
            loss_value = loss.item()
            grads = {n: (p.grad if p.grad is not None else np.zeros_like(p.data)) for n, p in params.items()}
        if prox:
            sq = 0.0
            for n, p in params.items():
                diff = p.data - theta_global[n]
                grads[n] = grads[n] + cfg.mu * diff
                sq += float((diff * diff).sum())
            loss_value += 0.5 * cfg.mu * sq
        if correction is not None:
            grads = {n: g + correction[n] for n, g in grads.items()}
        if not math.isfinite(loss_value):
            raise TrainingError(f"client {client.client_id}, round {round_idx}, local step {client.step}: "
                                f"non-finite loss {loss_value}")
        opt.step(params, grads, lr)
        lr_sum += lr
        client.step += 1
        losses.append(loss_value)
    model.zero_grad()

    client.optimizer_state = opt.state_dict()
    theta = model.state_dict()
    for name in personal or ():
        client.personal[name] = theta[name].copy()

    c_new = delta_c = None
    if scaffold:
        ci = client.c if client.c is not None else {n: np.zeros_like(theta_global[n]) for n in params}
        sc = server_c if server_c is not None else {n: np.zeros_like(theta_global[n]) for n in params}
        if lr_sum > 0:
            # option II: c_i <- c_i - c + (theta_global - theta_i) / (sum of local learning rates)
            c_new = {n: ci[n] - sc[n] + (theta_global[n] - theta[n]) / lr_sum for n in params}
        else:
            c_new = {n: ci[n].copy() for n in params}
        delta_c = {n: c_new[n] - ci[n] for n in params}
        client.c = c_new
    return LocalResult(theta, client.train.size, losses, c_new, delta_c)


def evaluate(model: ResNet, dataset: Dataset, indices, cfg: FedConfig) -> dict[str, float]:
    """Accuracy and mean loss of ``model`` (eval mode) on ``dataset[indices]``."""
    idx = np.asarray(indices, dtype=np.int64)
    if not len(idx):
        return {"accuracy": float("nan"), "loss": float("nan")}
    logits = model.predict(dataset.images[idx], cfg.eval_batch_size)
    y = dataset.labels[idx]
    loss = ops.loss(ops.Tensor(logits), y, cfg.loss, focal_gamma=cfg.focal_gamma).item()
    if dataset.multilabel:
        acc = float(((logits > 0) == (y > 0.5)).mean())
    else:
        acc = float((logits.argmax(axis=1) == y).mean())
    return {"accuracy": acc, "loss": float(loss)}


@dataclass
class FederationResult:
    metrics: list[RoundMetrics]
    global_state: dict[str, np.ndarray]
    clients: list[ClientState]
    server: ServerState
    spec: ModelSpec
    initial_state: dict[str, np.ndarray]

    def global_model(self) -> ResNet:
        model = build_model(self.spec, 0)
        model.load_state_dict(self.global_state)
        return model

    def client_model(self, client_id: int) -> ResNet:
        state = dict(self.global_state)
        state.update(self.clients[client_id].personal)
        model = build_model(self.spec, 0)
        model.load_state_dict(state)
        return model


def make_clients(train_shards: list[ClientShard], test_shards: list[ClientShard] | None, seed: int,
                 client_seeds: list[int] | None = None) -> list[ClientState]:
    clients = []
    for i, shard in enumerate(train_shards):
        s = client_seeds[i] if client_seeds is not None else client_seed(seed, shard.client_id)
        clients.append(ClientState(shard.client_id, shard, test_shards[i] if test_shards else None, s))
    return clients


def sample_participants(num_clients: int, fraction: float, seed: int, round_idx: int) -> list[int]:
    k = max(1, int(round(fraction * num_clients)))
    if k >= num_clients:
        return list(range(num_clients))
    rng = np.random.default_rng([seed, round_idx, 15485863])
    return sorted(int(i) for i in rng.choice(num_clients, size=k, replace=False))


def run_federation(spec: ModelSpec, dataset: Dataset, train_shards: list[ClientShard], cfg: FedConfig,
                   test_shards: list[ClientShard] | None = None, dp: DpConfig | None = None,
                   model_seed: int | None = None, client_seeds: list[int] | None = None,
                   on_round=None) -> FederationResult:
    """Simulate ``cfg.rounds`` rounds; results are independent of ``cfg.workers``."""
    if not train_shards:
        raise ConfigError("need at least one client", field="data.num_clients")
    template = build_model(spec, cfg.seed if model_seed is None else model_seed)
    if dp is not None:
        check_dp_eligible(template)
    personal = personal_names(template, cfg.aggregation)
    buffers = set(template.buffer_names())
    initial = template.state_dict()
    server = ServerState({k: v.copy() for k, v in initial.items()})
    clients = make_clients(train_shards, test_shards, cfg.seed, client_seeds)
    for c in clients:
        c.personal = {n: initial[n].copy() for n in personal}
    global_test = np.concatenate([s.indices for s in test_shards]) if test_shards else np.empty(0, np.int64)

    models = [template] + [build_model(spec, 0) for _ in range(min(cfg.workers, len(clients)) - 1)]
    metrics: list[RoundMetrics] = []
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for r in range(cfg.rounds):
            t0 = time.perf_counter()
            ids = sample_participants(len(clients), cfg.participation, cfg.seed, r)
            server_c = server.c
            if cfg.aggregation == "scaffold" and server_c is None:
                server_c = {n: np.zeros_like(server.theta[n]) for n in template.parameter_names()}

            def job(slot_and_id):
                slot, cid = slot_and_id
                return local_train(clients[cid], server.theta, cfg, models[slot], dataset, r, server_c,
                                   personal, dp)

            tasks = [(k % len(models), cid) for k, cid in enumerate(ids)]
            if pool is None:
                results = [job(t) for t in tasks]
            else:
                # one model per worker slot; batches of len(models) keep slots exclusive
                results = []
                for start in range(0, len(tasks), len(models)):
                    results += list(pool.map(job, tasks[start:start + len(models)]))

            aggregate([(res.theta, res.num_samples) for res in results], cfg.aggregation, server,
                      set(personal), buffers, cfg.server_lr, cfg.beta1, cfg.beta2, cfg.server_eps,
                      [res.c_new for res in results] if cfg.aggregation == "scaffold" else None, ids,
                      len(clients))

            template.load_state_dict(server.theta)
            global_metrics = evaluate(template, dataset, global_test, cfg) if len(global_test) else {}
            local, best = {}, {}
            for c in clients:
                if c.test is None or c.test.size == 0:
                    continue
                if personal:
                    state = dict(server.theta)
                    state.update(c.personal)
                    template.load_state_dict(state)
                acc = evaluate(template, dataset, c.test.indices, cfg)["accuracy"]
                local[c.client_id] = acc
                if acc > c.best_metric:
                    c.best_metric, c.best_round = acc, r
                best[c.client_id] = c.best_metric
            if personal:
                template.load_state_dict(server.theta)
            eps = {}
            if dp is not None:
                for c in clients:
                    if c.ledger is not None:
                        eps[c.client_id] = rdp_epsilon(c.ledger, dp.delta_for(c.train.size))[0]
            m = RoundMetrics(r, {cid: float(np.mean(res.losses)) if res.losses else float("nan")
                                 for cid, res in zip(ids, results)},
                             global_metrics, local, best, ids, eps, time.perf_counter() - t0)
            metrics.append(m)
            if on_round is not None:
                on_round(m, server)
    finally:
        if pool is not None:
            pool.shutdown()
    return FederationResult(metrics, {k: v.copy() for k, v in server.theta.items()}, clients, server, spec,
                            initial)
