"""Command-line entry point: ``python -m anfr {run,sweep,report,inspect}``."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from ..errors import AnfrError
from .checkpoint import describe_checkpoint, load_checkpoint
from .config import parse_config
from .experiment import run, sweep
from .report import format_table, report


def _load(args):
    cfg = parse_config(args.config)
    if getattr(args, "output", None):
        cfg = dataclasses.replace(cfg, output_dir=args.output)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anfr", description="Federated normalization-free training experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one seed of an experiment")
    r.add_argument("config")
    r.add_argument("--seed", type=int, help="override the first configured seed")
    r.add_argument("--output", help="output root (also settable via ANFR_OUTPUT_ROOT)")

    s = sub.add_parser("sweep", help="run several seeds and summarize mean ± std")
    s.add_argument("config")
    s.add_argument("--seeds", help="comma-separated seeds (default: from the config)")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--output")

    rp = sub.add_parser("report", help="tabulate completed runs below a directory")
    rp.add_argument("dir")

    i = sub.add_parser("inspect", help="list the arrays stored in a checkpoint")
    i.add_argument("checkpoint")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _load(args)
            seed = args.seed if args.seed is not None else cfg.seeds[0]
            m = run(cfg, seed)
            print(f"{m.status}: {m.run_dir}")
            for k, v in sorted(m.summary.items()):
                if not k.startswith(("csi_skew", "attention_variability")):
                    print(f"  {k} = {v}")
        elif args.command == "sweep":
            cfg = _load(args)
            seeds = [int(t) for t in args.seeds.split(",")] if args.seeds else None
            for k, (mean, std, n) in sweep(cfg, seeds, args.workers).items():
                if not k.startswith(("csi_skew", "attention_variability")):
                    print(f"{k}: {mean:.6g} ± {std:.3g} (n={n})")
        elif args.command == "report":
            print(format_table(report(args.dir)))
        elif args.command == "inspect":
            print(describe_checkpoint(load_checkpoint(args.checkpoint)))
    except (AnfrError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0
