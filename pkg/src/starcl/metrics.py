"""Continual-learning metrics and post-hoc probes."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .netcore import Batch, LossSpec, ParamSet, axpy, forward, layer_norms, loss_value
from .star import StarConfig, ascend, init_noise, lfg, normalized_step


class MetricError(ValueError):
    pass


@dataclass
class AccuracyMatrix:
    """``values[i, j]``: accuracy on task ``i`` after training through task ``j``.

    Entries never evaluated are NaN.
    """
    values: np.ndarray

    @classmethod
    def empty(cls, num_tasks: int) -> "AccuracyMatrix":
        return cls(np.full((num_tasks, num_tasks), np.nan))

    @property
    def num_tasks(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task", "checkpoint", "value", "variant"])
            for i in range(self.num_tasks):
                for j in range(self.num_tasks):
                    if not np.isnan(self.values[i, j]):
                        w.writerow([i, j, repr(float(self.values[i, j])), "accuracy"])

    @classmethod
    def from_csv(cls, path) -> "AccuracyMatrix":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        k = 1 + max(max(int(r["task"]), int(r["checkpoint"])) for r in rows)
        m = cls.empty(k)
        for r in rows:
            m.values[int(r["task"]), int(r["checkpoint"])] = float(r["value"])
        return m


def average_accuracy(m: AccuracyMatrix) -> float:
    final = m.values[:, -1]
    if np.isnan(final).any():
        raise MetricError("final column of the accuracy matrix is incomplete")
    return float(final.mean())


def final_forgetting(m: AccuracyMatrix) -> float:
    """Mean over tasks ``1..k-1`` of best accuracy at checkpoints ``t_1..t_{k-1}``
    minus final accuracy. Can be negative under backward transfer."""
    k = m.num_tasks
    if k < 2:
        raise MetricError("final forgetting needs at least two tasks")
    final = m.values[:, -1]
    if np.isnan(final[:-1]).any():
        raise MetricError("final column of the accuracy matrix is incomplete")
    drops = []
    for i in range(k - 1):
        history = m.values[i, :k - 1]
        if np.isnan(history).all():
            raise MetricError(f"task {i} has no checkpoint before the final one")
        drops.append(np.nanmax(history) - final[i])
    return float(np.mean(drops))


def forgetting_decomposition(pred_then, pred_now, truth) -> tuple[int, int, float]:
    """Split the error change between two checkpoints into forgotten and newly learned samples."""
    pred_then, pred_now, truth = map(np.asarray, (pred_then, pred_now, truth))
    if not (pred_then.shape == pred_now.shape == truth.shape):
        raise MetricError("prediction and label vectors differ in length")
    then_ok = pred_then == truth
    now_ok = pred_now == truth
    forgotten = int(np.count_nonzero(then_ok & ~now_ok))
    learned = int(np.count_nonzero(~then_ok & now_ok))
    n = truth.size
    return forgotten, learned, (forgotten - learned) / n if n else 0.0


def accuracy(params: ParamSet, batch: Batch) -> float:
    if len(batch) == 0:
        return float("nan")
    return float(np.mean(forward(params, batch).predicted_labels == batch.labels))


@dataclass(frozen=True)
class ProbeRow:
    task: int
    checkpoint: int
    value: float
    variant: str


def surrogate_probe(checkpoints: Sequence[tuple[int, ParamSet]], testsets: Sequence[Batch],
                    ascent_cfg: StarConfig, rng: np.random.Generator,
                    worst_steps: int = 5) -> list[ProbeRow]:
    """Divergence of later checkpoints from each task's own checkpoint.

    ``checkpoints[i]`` must be the parameters right after task ``i``. For each
    task ``i`` and each checkpoint ``t >= i`` this reports the summed KL between
    the outputs at ``t_i`` and at ``t`` on the task-``i`` test samples that
    ``t_i`` classifies correctly (``plain``), and the same after ``worst_steps``
    normalized ascent steps away from ``t`` (``worst``). Ascent steps are kept
    only when they increase the divergence, so ``worst >= plain`` always.
    """
    stamps = [c for c, _ in checkpoints]
    if any(b <= a for a, b in zip(stamps, stamps[1:])):
        raise MetricError("checkpoints must be strictly increasing")
    if len(checkpoints) < len(testsets):
        raise MetricError(f"{len(testsets)} test sets but only {len(checkpoints)} checkpoints")
    rows = []
    for i, test in enumerate(testsets):
        anchor = checkpoints[i][1]
        pred = forward(anchor, test)
        keep = np.flatnonzero(pred.predicted_labels == test.labels)
        data = test.subset(keep)
        reference = pred.probabilities[keep]
        for stamp, params in checkpoints[i:]:
            plain = lfg(reference, params, data)
            worst = plain
            if len(data):
                delta0 = init_noise(params, ascent_cfg.epsilon, rng)
                start = lfg(reference, axpy(params, delta0, 1.0), data)
                if start <= plain:
                    delta0 = params.zeros_like()
                delta, _ = ascend(reference, params, data, delta0, ascent_cfg.gamma / worst_steps,
                                  worst_steps, monotone=True)
                worst = max(plain, lfg(reference, axpy(params, delta, 1.0), data))
            rows.append(ProbeRow(i, stamp, plain, "plain"))
            rows.append(ProbeRow(i, stamp, worst, "worst"))
    return rows


def landscape_probe(params: ParamSet, eval_set: Batch, grid: int, span: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Cross-entropy over a 2-D slice through ``params``.

    Both directions are Gaussian, rescaled per tensor to the tensor's own norm.
    Cell ``[a, b]`` holds the loss at ``params + span*(u_a*d1 + v_b*d2)`` with
    ``u, v`` evenly spaced on ``[-1, 1]``; the centre cell is ``params`` itself.
    """
    if grid < 3 or grid % 2 == 0:
        raise ValueError("grid must be an odd integer >= 3")
    if span <= 0:
        raise ValueError("span must be positive")
    norms = layer_norms(params)
    dirs = []
    for _ in range(2):
        z = params.map(lambda t: rng.standard_normal(t.shape))
        dirs.append(normalized_step(z, norms, 1.0)[0])
    half = grid // 2
    coords = np.arange(-half, half + 1) / half
    ce = LossSpec.cross_entropy()
    out = np.empty((grid, grid))
    for a, u in enumerate(coords):
        row_params = axpy(params, dirs[0], span * u)
        for b, v in enumerate(coords):
            out[a, b] = loss_value(axpy(row_params, dirs[1], span * v), eval_set, ce)
    return out


def write_probe_csv(rows: Sequence[ProbeRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "checkpoint", "value", "variant"])
        for r in rows:
            w.writerow([r.task, r.checkpoint, repr(r.value), r.variant])


def write_grid_csv(grid: np.ndarray, span: float, path) -> None:
    half = grid.shape[0] // 2
    coords = np.arange(-half, half + 1) / half * span
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b", "value"])
        for i, u in enumerate(coords):
            for j, v in enumerate(coords):
                w.writerow([repr(float(u)), repr(float(v)), repr(float(grid[i, j]))])


def write_summary_json(m: AccuracyMatrix, path, **extra) -> dict:
    summary = {"average_accuracy": average_accuracy(m)}
    summary["final_forgetting"] = final_forgetting(m) if m.num_tasks >= 2 else None
    summary.update(extra)
    Path(path).write_text(json.dumps(summary, indent=2))
    return summary
