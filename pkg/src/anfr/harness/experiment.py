"""Run orchestration: data -> federation -> analysis, with manifests and metrics files."""

from __future__ import annotations

import csv
import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..analysis import (attention_degenerate, attention_stats, capture_class_conditional, csi_distribution,
                        csi_records, write_attention_csv, write_histogram_csv)
from ..data import (gen_colorshift, partition, standardize_inputs, train_test_split, validate_shards,
                    write_shard_index)
from ..dp import rdp_epsilon
from ..fed import run_federation
from ..fed.simulation import FederationResult
from ..nn.models import build_model
from .checkpoint import save_checkpoint
from .config import ExperimentConfig, parse_config, serialize_config

OUTPUT_ROOT_ENV = "ANFR_OUTPUT_ROOT"
METRICS_HEADER = ("round", "client_id", "metric_name", "value")
METRICS_SCHEMA_VERSION = 1


@dataclass
class RunManifest:
    config: str
    seed: int
    engine_version: str
    run_dir: str
    outputs: dict[str, str] = field(default_factory=dict)
    status: str = "running"
    error: str | None = None
    privacy: dict | None = None
    summary: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    def write(self) -> None:
        Path(self.run_dir, "manifest.json").write_text(self.to_json() + "\n")


def output_root(cfg: ExperimentConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or cfg.output_dir)


def prepare_data(cfg: ExperimentConfig, seed: int):
    """Generated dataset plus per-client (train, test) shards for one seed."""
    d = cfg.data
    ds, natural = gen_colorshift(d.num_clients, d.num_classes, d.samples_per_client, cfg.partition.shift_strength,
                                 d.image_size, seed)
    if d.standardize:
        ds = standardize_inputs(ds)
    if cfg.partition.scheme == "feature_shift":
        shards = natural
    else:
        shards = partition(ds, d.num_clients, cfg.with_seed(seed).partition)
    validate_shards(shards, len(ds))
    split = [train_test_split(s, d.test_fraction, seed, ds.labels) for s in shards]
    return ds, shards, [a for a, _ in split], [b for _, b in split]


def metrics_rows(result: FederationResult) -> list[tuple]:
    rows = []
    for m in result.metrics:
        for cid in sorted(m.train_loss):
            rows.append((m.round, cid, "train_loss", m.train_loss[cid]))
        for name in sorted(m.global_metrics):
            rows.append((m.round, "global", name, m.global_metrics[name]))
        for cid in sorted(m.local_metrics):
            rows.append((m.round, cid, "local_accuracy", m.local_metrics[cid]))
            rows.append((m.round, cid, "best_local_accuracy", m.best_local[cid]))
        for cid in sorted(m.epsilon):
            rows.append((m.round, cid, "epsilon", m.epsilon[cid]))
    return rows


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r, cid, name, value in rows:
            w.writerow([r, cid, name, repr(float(value))])


def read_metrics_csv(path) -> list[tuple]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = tuple(next(rd))
        if header != METRICS_HEADER:
            raise ValueError(f"unexpected metrics header {header}")
        return [(int(r), cid, name, float(v)) for r, cid, name, v in rd]


def final_metrics(rows) -> dict[str, float]:
    """Last-round global accuracy/loss and the mean over clients of the best local accuracy."""
    if not rows:
        return {}
    last = max(r for r, *_ in rows)
    out = {f"global_{name}": v for r, cid, name, v in rows if r == last and cid == "global"}
    best = [v for r, cid, name, v in rows if r == last and name == "best_local_accuracy"]
    if best:
        out["mean_best_local_accuracy"] = float(np.mean(best))
    return out


def _analysis(cfg: ExperimentConfig, result: FederationResult, ds, test_idx, run_dir: Path, outputs: dict,
              summary: dict) -> None:
    test = ds.subset(test_idx)
    present = sorted(set(test.labels.tolist())) if not test.multilabel else list(range(ds.num_classes))
    if len(present) < ds.num_classes:
        return
    if cfg.analysis.csi:
        dists = []
        for phase, state in (("pre_fl", result.initial_state), ("post_fl", result.global_state)):
            model = build_model(cfg.model, 0)
            model.load_state_dict(state)
            for rec in csi_records(capture_class_conditional(model, test), cfg.model.architecture, phase):
                dist = csi_distribution(rec.values, f"{phase}:{rec.layer}")
                dists.append(dist)
                summary[f"csi_skew:{phase}:{rec.layer}"] = dist.skewness
        write_histogram_csv(dists, run_dir / "csi_histograms.csv")
        outputs["csi_histograms"] = "csi_histograms.csv"
    model = result.global_model()
    if cfg.analysis.attention and model.attention_block_names:
        recs = attention_stats(model, test)
        write_attention_csv(recs, run_dir / "attention.csv")
        outputs["attention"] = "attention.csv"
        for r in recs:
            summary[f"attention_variability:{r.layer}"] = r.variability
        summary["attention_degenerate"] = attention_degenerate(recs)


def run(cfg: ExperimentConfig, seed: int, run_dir=None) -> RunManifest:
    """Execute one seed; artifacts land in ``run_dir`` (default ``<root>/<name>/seed_<seed>``)."""
    run_dir = Path(run_dir) if run_dir is not None else output_root(cfg) / cfg.name / f"seed_{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "checkpoints").mkdir(exist_ok=True)
    cfg_seeded = cfg.with_seed(seed)
    manifest = RunManifest(serialize_config(cfg), seed, __version__, str(run_dir))
    (run_dir / "config.ini").write_text(manifest.config)
    manifest.outputs["config"] = "config.ini"
    manifest.write()
    try:
        ds, shards, train, test = prepare_data(cfg, seed)
        write_shard_index(shards, run_dir / "shards.txt")
        manifest.outputs["shards"] = "shards.txt"
        initial = build_model(cfg.model, seed).state_dict()
        save_checkpoint(initial, run_dir / "checkpoints" / "initial.ckpt")
        manifest.outputs["initial_checkpoint"] = "checkpoints/initial.ckpt"

        result = run_federation(cfg.model, ds, train, cfg_seeded.fed, test, cfg.dp, model_seed=seed)
        rows = metrics_rows(result)
        write_metrics_csv(rows, run_dir / "metrics.csv")
        manifest.outputs["metrics"] = "metrics.csv"
        manifest.summary.update(final_metrics(rows))
        if cfg.fed.rounds > 0:
            save_checkpoint(result.global_state, run_dir / "checkpoints" / "final.ckpt")
            manifest.outputs["final_checkpoint"] = "checkpoints/final.ckpt"
            test_idx = np.concatenate([t.indices for t in test])
            _analysis(cfg, result, ds, test_idx, run_dir, manifest.outputs, manifest.summary)
        if cfg.dp is not None:
            manifest.privacy = {}
            for c in result.clients:
                if c.ledger is None:
                    continue
                delta = cfg.dp.delta_for(c.train.size)
                eps, order = rdp_epsilon(c.ledger, delta)
                info = c.ledger.to_dict()
                info.pop("rdp")
                info.update(delta=delta, epsilon=eps, order=order)
                manifest.privacy[str(c.client_id)] = info
        manifest.status = "completed"
    except Exception as exc:
        manifest.status = "failed"
        manifest.error = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        manifest.write()
        raise
    manifest.write()
    return manifest


def _run_worker(args):
    text, seed, run_dir = args
    return run(parse_config(text), seed, run_dir).to_json()


def sweep(cfg: ExperimentConfig, seeds=None, workers: int = 1) -> dict:
    """Run every seed (optionally in worker processes) and write ``summary.csv``."""
    seeds = tuple(seeds) if seeds is not None else cfg.seeds
    root = output_root(cfg) / cfg.name
    text = serialize_config(cfg)
    jobs = [(text, s, root / f"seed_{s}") for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            manifests = [json.loads(m) for m in pool.map(_run_worker, jobs)]
    else:
        manifests = [json.loads(_run_worker(j)) for j in jobs]
    per_seed = [read_metrics_csv(Path(m["run_dir"]) / "metrics.csv") for m in manifests]
    summary = summarize([final_metrics(rows) for rows in per_seed])
    write_summary_csv(summary, root / "summary.csv")
    return summary


def summarize(finals: list[dict]) -> dict[str, tuple[float, float, int]]:
    """metric -> (mean, sample std, n) across seeds."""
    keys = sorted(set().union(*finals)) if finals else []
    out = {}
    for k in keys:
        vals = np.array([f[k] for f in finals if k in f], dtype=np.float64)
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out[k] = (float(vals.mean()), std, len(vals))
    return out


def write_summary_csv(summary: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "mean", "std", "n"])
        for k, (mean, std, n) in summary.items():
            w.writerow([k, repr(mean), repr(std), n])
