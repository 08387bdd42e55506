"""Architecture x aggregation comparison tables from completed runs."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .config import parse_config
from .experiment import final_metrics, read_metrics_csv

PERSONALIZED = ("fedper", "fedbn")


def collect_runs(root) -> list[dict]:
    """Completed runs below ``root``: architecture, aggregation, seed and final metrics."""
    runs = []
    for mpath in sorted(Path(root).rglob("manifest.json")):
        m = json.loads(mpath.read_text())
        if m.get("status") != "completed":
            continue
        cfg = parse_config(m["config"])
        rows = read_metrics_csv(Path(mpath.parent, m["outputs"]["metrics"]))
        runs.append({"architecture": cfg.model.architecture, "aggregation": cfg.fed.aggregation,
                     "seed": m["seed"], "final": final_metrics(rows)})
    return runs


def headline(run: dict) -> float | None:
    """Global accuracy, or mean best local accuracy for personalized strategies."""
    key = "mean_best_local_accuracy" if run["aggregation"] in PERSONALIZED else "global_accuracy"
    return run["final"].get(key)


def report(root) -> dict:
    """Grid of (mean, std, n) keyed by (architecture, aggregation); writes report.csv and report.txt."""
    runs = collect_runs(root)
    cells: dict[tuple[str, str], list[float]] = {}
    for r in runs:
        v = headline(r)
        if v is not None:
            cells.setdefault((r["architecture"], r["aggregation"]), []).append(v)
    grid = {}
    for key, vals in cells.items():
        a = np.array(vals, dtype=np.float64)
        grid[key] = (float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0, len(a))
    root = Path(root)
    with open(root / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["architecture", "aggregation", "mean", "std", "n"])
        for (arch, agg), (mean, std, n) in sorted(grid.items()):
            w.writerow([arch, agg, repr(mean), repr(std), n])
    (root / "report.txt").write_text(format_table(grid) + "\n")
    return grid


def format_table(grid: dict) -> str:
    """Aligned text table; the best architecture in each aggregation column is wrapped in ``**``."""
    archs = sorted({a for a, _ in grid})
    aggs = sorted({g for _, g in grid})
    best = {}
    for g in aggs:
        col = [(grid[(a, g)][0], a) for a in archs if (a, g) in grid]
        if col:
            best[g] = max(col)[1]
    rows = [["architecture"] + aggs]
    for a in archs:
        row = [a]
        for g in aggs:
            if (a, g) not in grid:
                row.append("N/A")
                continue
            mean, std, _ = grid[(a, g)]
            cell = f"{100 * mean:.2f} ± {100 * std:.2f}"
            row.append(f"**{cell}**" if best.get(g) == a else cell)
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)
