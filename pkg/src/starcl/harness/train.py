"""The rehearsal training loop with the optional stability regularizer, plus
ablation sweeps and run-directory persistence."""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import checkpoint
from ..methods import cl_loss_grad, combined_update
from ..metrics import AccuracyMatrix, accuracy, average_accuracy, final_forgetting
from ..netcore import ParamSet, forward, init_mlp
from ..rehearsal import ReplayBuffer
from ..star import StarStepReport, star_step
from .config import RunConfig, dump_config
from .streams import TaskStream, iterate_batches, load_idx_stream, make_synthetic_stream

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "STARCL_OUTPUT_ROOT"

ABLATION_AXES = {
    "selector": ("correct_only", "all"),
    "perturb_mode": ("gradient", "random"),
    "data_source": ("buffer", "current", "both"),
    "ascent_steps": (1, 3, 5),
}


class TrainingError(RuntimeError):
    def __init__(self, step: int, cause: BaseException, state_path: Optional[Path] = None):
        where = f" (state saved to {state_path})" if state_path else ""
        super().__init__(f"training failed at step {step}: {cause!r}{where}")
        self.step = step
        self.state_path = state_path


@dataclass
class RunRecord:
    config: RunConfig
    accuracy: AccuracyMatrix
    average_accuracy: float
    final_forgetting: Optional[float]
    losses: list[float] = field(default_factory=list)
    star_reports: list[StarStepReport] = field(default_factory=list)
    checkpoints: list[tuple[int, ParamSet]] = field(default_factory=list)
    wall_time: float = 0.0
    output_dir: Optional[Path] = None


def build_stream(cfg: RunConfig) -> TaskStream:
    d = cfg.data
    if d.kind == "synthetic":
        return make_synthetic_stream(d.num_classes, d.tasks, d.dims, d.samples_per_class,
                                     d.separation, cfg.data_seed, d.test_per_class)
    if d.kind == "idx":
        return load_idx_stream(d.image_file, d.label_file, d.tasks,
                               d.test_image_file or None, d.test_label_file or None,
                               d.num_classes, seed=cfg.data_seed)
    raise ValueError(f"unknown data.kind {d.kind!r}")


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators; the regularizer's stream never perturbs the others."""
    names = ("init", "shuffle", "buffer", "star", "probe")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, children)}


def train(cfg: RunConfig, stream: Optional[TaskStream] = None,
          output_dir: Optional[os.PathLike] = None) -> RunRecord:
    """Run the task stream end to end.

    Task identity is used only to decide when to checkpoint and evaluate; the
    per-batch update sees nothing but the batch, the buffer and the parameters.
    """
    started = time.perf_counter()
    stream = build_stream(cfg) if stream is None else stream
    rngs = rng_streams(cfg.seed)
    params = init_mlp(stream.in_dim, cfg.hidden, stream.num_classes, rngs["init"])
    buffer = ReplayBuffer(cfg.train.buffer_capacity, rngs["buffer"])
    method = dataclasses.replace(cfg.method, buffer_batch_size=cfg.train.batch_size)
    k = len(stream)
    acc = AccuracyMatrix.empty(k)
    record = RunRecord(cfg, acc, float("nan"), None)
    out = Path(output_dir) if output_dir is not None else None

    step = 0
    try:
        for t, task in enumerate(stream.tasks):
            for _ in range(cfg.train.epochs_per_task):
                for batch in iterate_batches(task.train, cfg.train.batch_size, rngs["shuffle"]):
                    params = _step(params, batch, buffer, method, cfg, rngs["star"], record)
                    step += 1
            record.checkpoints.append((t, params))
            for i in range(t + 1):
                acc.values[i, t] = accuracy(params, stream.tasks[i].test)
            log.info("task %d done: acc on seen tasks %s", t, np.round(acc.values[:t + 1, t], 4))
    except Exception as exc:
        state = None
        if out is not None:
            state = out / "postmortem.ckpt"
            checkpoint.save(state, params, buffer, {"step": step})
        raise TrainingError(step, exc, state) from exc

    record.average_accuracy = average_accuracy(acc)
    record.final_forgetting = final_forgetting(acc) if k >= 2 else None
    record.wall_time = time.perf_counter() - started
    if out is not None:
        persist(record, out, buffer)
    return record


def _step(params, batch, buffer, method, cfg, star_rng, record):
    if cfg.star is not None:
        star_g, report = star_step(params, buffer, batch, cfg.star, star_rng)
        record.star_reports.append(report)
    cl_loss, cl_g = cl_loss_grad(params, batch, buffer, method)
    record.losses.append(cl_loss)
    # logits at the pre-update parameters feed DER++'s stored targets
    logits = forward(params, batch).logits
    if cfg.star is not None:
        params = combined_update(params, cl_g, star_g, cfg.star.lam, cfg.train.lr)
    else:
        params = combined_update(params, cl_g, cl_g.zeros_like(), 0.0, cfg.train.lr)
    buffer.update(batch, logits)
    return params


STAR_CSV_FIELDS = ("step", "selected_count", "lfg_at_delta0", "lfg_at_delta", "star_loss",
                   "star_grad_norm", "skipped", "reason", "per_layer_delta_ratio")


def persist(record: RunRecord, out: Path, buffer: Optional[ReplayBuffer] = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo").write_text(dump_config(record.config))
    (out / "metrics.json").write_text(json.dumps({
        "average_accuracy": record.average_accuracy,
        "final_forgetting": record.final_forgetting,
        "wall_time": record.wall_time,
    }, indent=2))
    record.accuracy.to_csv(out / "accuracy_matrix.csv")
    with open(out / "loss_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "cl_loss"])
        w.writerows((i, repr(v)) for i, v in enumerate(record.losses))
    with open(out / "star_steps.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STAR_CSV_FIELDS)
        for i, r in enumerate(record.star_reports):
            w.writerow([i, r.selected_count, repr(r.lfg_at_delta0), repr(r.lfg_at_delta),
                        repr(r.star_loss), repr(r.star_grad_norm), int(r.skipped), r.reason,
                        " ".join(repr(x) for x in r.per_layer_delta_ratio)])
    last = len(record.checkpoints) - 1
    for t, params in record.checkpoints:
        checkpoint.save(out / "checkpoints" / f"task_{t}.ckpt", params,
                        buffer if t == last else None, {"task": t})
    record.output_dir = out


def load_run(run_dir) -> tuple[RunConfig, list[tuple[int, ParamSet]]]:
    from .config import load_config

    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.echo")
    ckpts = []
    for path in sorted((run_dir / "checkpoints").glob("task_*.ckpt"),
                       key=lambda p: int(p.stem.split("_")[1])):
        params, _, meta = checkpoint.load(path)
        ckpts.append((int(meta["task"]), params))
    return cfg, ckpts


def default_output_dir(name: str) -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / name


def ablation_cells(base_cfg: RunConfig, axes: Sequence[str]) -> list[dict]:
    for a in axes:
        if a not in ABLATION_AXES:
            raise ValueError(f"unknown ablation axis {a!r}; expected {sorted(ABLATION_AXES)}")
    return [dict(zip(axes, combo)) for combo in itertools.product(*(ABLATION_AXES[a] for a in axes))]


def run_ablation_suite(base_cfg: RunConfig, axes: Sequence[str], seeds: Optional[Sequence[int]] = None,
                       output_dir: Optional[os.PathLike] = None) -> list[tuple[dict, RunRecord]]:
    """Cartesian product over ``axes``; every cell reuses the same seeds."""
    seeds = [base_cfg.seed] if seeds is None else list(seeds)
    results = []
    for cell in ablation_cells(base_cfg, axes):
        for seed in seeds:
            cfg = base_cfg.replace(seed=seed)
            if cell:
                cfg = cfg.with_star(**cell)
            sub = None
            if output_dir is not None:
                tag = "_".join(f"{k}-{v}" for k, v in cell.items()) or "base"
                sub = Path(output_dir) / tag / f"seed_{seed}"
            results.append((cell, train(cfg, output_dir=sub)))
    if output_dir is not None:
        write_ablation_table(results, Path(output_dir) / "ablation.csv")
    return results


def write_ablation_table(results, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    axes = list(results[0][0]) if results else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*axes, "seed", "average_accuracy", "final_forgetting"])
        for cell, rec in results:
            w.writerow([*(cell[a] for a in axes), rec.config.seed, repr(rec.average_accuracy),
                        repr(rec.final_forgetting)])
