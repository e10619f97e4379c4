"""Command-line entry point: ``starcl <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import checkpoint
from ..metrics import (
    accuracy, landscape_probe, surrogate_probe, write_grid_csv, write_probe_csv,
)
from ..netcore import Batch
from ..star import StarConfig
from .config import load_config
from .train import (
    ABLATION_AXES, build_stream, default_output_dir, load_run, rng_streams, run_ablation_suite,
    train,
)


def _out_dir(cfg, config_path, override):
    if override:
        return Path(override)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return default_output_dir(Path(config_path).stem)


def cmd_train(args):
    cfg = load_config(args.config)
    out = _out_dir(cfg, args.config, args.out)
    rec = train(cfg, output_dir=out)
    print(json.dumps({"output_dir": str(out), "average_accuracy": rec.average_accuracy,
                      "final_forgetting": rec.final_forgetting,
                      "wall_time": rec.wall_time}, indent=2))


def cmd_ablate(args):
    cfg = load_config(args.config)
    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    out = _out_dir(cfg, args.config, args.out)
    results = run_ablation_suite(cfg, axes, seeds, output_dir=out)
    groups: dict = {}
    for cell, rec in results:
        groups.setdefault(tuple(cell.items()), []).append(rec)
    for cell, recs in groups.items():
        a = np.mean([r.average_accuracy for r in recs])
        f = np.mean([r.final_forgetting for r in recs])
        label = ", ".join(f"{k}={v}" for k, v in cell) or "base"
        print(f"{label:50s} A={a:.4f} F={f:.4f} (n={len(recs)})")
    print(f"table: {out / 'ablation.csv'}")


def cmd_probe_surrogate(args):
    cfg, ckpts = load_run(args.run)
    stream = build_stream(cfg)
    probe_cfg = cfg.star or StarConfig()
    rows = surrogate_probe(ckpts, stream.testsets, probe_cfg, rng_streams(cfg.seed)["probe"],
                           worst_steps=args.steps)
    path = Path(args.run) / "surrogate_probe.csv"
    write_probe_csv(rows, path)
    for r in rows:
        print(f"task={r.task} checkpoint={r.checkpoint} {r.variant:5s} {r.value:.6f}")
    print(f"written: {path}")


def cmd_probe_landscape(args):
    cfg, ckpts = load_run(args.run)
    stream = build_stream(cfg)
    t = len(ckpts) - 1 if args.task is None else args.task
    params = dict(ckpts)[t]
    parts = [task.test for task in stream.tasks[:t + 1]]
    # equal share per task so no single task dominates the slice
    n = min(len(b) for b in parts)
    seen = Batch.concat([b.subset(np.arange(n)) for b in parts])
    grid = landscape_probe(params, seen, args.grid, args.span, rng_streams(cfg.seed)["probe"])
    path = Path(args.run) / f"landscape_task_{t}.csv"
    write_grid_csv(grid, args.span, path)
    print(f"centre loss {grid[args.grid // 2, args.grid // 2]:.6f}, "
          f"min {grid.min():.6f}, max {grid.max():.6f}")
    print(f"written: {path}")


def cmd_eval(args):
    path = Path(args.checkpoint)
    params, _, meta = checkpoint.load(path)
    cfg = load_config(args.config) if args.config else load_config(path.parent.parent / "config.echo")
    stream = build_stream(cfg)
    accs = [accuracy(params, task.test) for task in stream.tasks]
    for i, a in enumerate(accs):
        print(f"task {i}: accuracy {a:.4f}")
    print(f"mean over all tasks: {np.mean(accs):.4f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="starcl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="run one continual-learning experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="run directory (default: output.dir or $STARCL_OUTPUT_ROOT/<config>)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("ablate", help="sweep regularizer components")
    s.add_argument("--config", required=True)
    s.add_argument("--axes", required=True, help=f"comma list from {sorted(ABLATION_AXES)}")
    s.add_argument("--seeds", help="comma list of seeds (default: config seed)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("probe-surrogate", help="forgetting-surrogate divergence of a finished run")
    s.add_argument("--run", required=True)
    s.add_argument("--steps", type=int, default=5, help="ascent steps for the worst-case curve")
    s.set_defaults(func=cmd_probe_surrogate)

    s = sub.add_parser("probe-landscape", help="2-D loss slice around a checkpoint")
    s.add_argument("--run", required=True)
    s.add_argument("--grid", type=int, default=21)
    s.add_argument("--span", type=float, default=1.0)
    s.add_argument("--task", type=int, help="checkpoint index (default: last)")
    s.set_defaults(func=cmd_probe_landscape)

    s = sub.add_parser("eval", help="accuracy of a checkpoint on every task")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", help="config to rebuild the stream (default: the run's config.echo)")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
