"""Worst-case output-stability regularizer.

For a batch of (by default correctly classified) replay samples the
regularizer freezes the current output distribution as a reference, finds a
layer-normalized parameter perturbation that pushes the outputs away from that
reference, and returns the KL gradient measured at the perturbed point. The
training loop adds ``lam`` times that gradient to the baseline gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .netcore import (
    Batch, GradSet, LossSpec, ParamSet, axpy, backward, forward, kl_divergence, layer_norms,
)
from .rehearsal import ReplayBuffer

SELECTORS = ("correct_only", "all")
PERTURB_MODES = ("gradient", "random")
DATA_SOURCES = ("buffer", "current", "both")


@dataclass(frozen=True)
class StarConfig:
    gamma: float = 0.01
    lam: float = 0.1
    epsilon: float = 1e-4
    ascent_steps: int = 1
    selector: str = "correct_only"
    perturb_mode: str = "gradient"
    data_source: str = "buffer"

    def __post_init__(self):
        for name in ("gamma", "lam", "epsilon"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"star.{name} must be finite and >= 0, got {v}")
        if int(self.ascent_steps) != self.ascent_steps or self.ascent_steps < 1:
            raise ValueError("star.ascent_steps must be a positive integer")
        if self.selector not in SELECTORS:
            raise ValueError(f"star.selector must be one of {SELECTORS}")
        if self.perturb_mode not in PERTURB_MODES:
            raise ValueError(f"star.perturb_mode must be one of {PERTURB_MODES}")
        if self.data_source not in DATA_SOURCES:
            raise ValueError(f"star.data_source must be one of {DATA_SOURCES}")


@dataclass
class StarStepReport:
    selected_count: int = 0
    lfg_at_delta0: float = 0.0
    lfg_at_delta: float = 0.0
    per_layer_delta_ratio: list[float] = field(default_factory=list)
    star_loss: float = 0.0
    star_grad_norm: float = 0.0
    skipped: bool = False
    reason: str = ""
    # per tensor: did the ascent gradient vanish there
    zero_grad_layers: list[bool] = field(default_factory=list)


def select_correct(params: ParamSet, batch: Batch) -> Batch:
    """Rows the model currently classifies correctly."""
    if len(batch) == 0:
        return batch
    pred = forward(params, batch).predicted_labels
    return batch.subset(np.flatnonzero(pred == batch.labels))


def lfg(reference_probs: np.ndarray, params: ParamSet, batch: Batch) -> float:
    """Summed KL(reference || q_params(x)) over the rows of ``batch``."""
    if reference_probs.shape[0] != len(batch):
        raise ValueError(f"{reference_probs.shape[0]} reference rows for {len(batch)} samples")
    if len(batch) == 0:
        return 0.0
    return kl_divergence(reference_probs, forward(params, batch).probabilities)


def _per_tensor(params: ParamSet, fn) -> ParamSet:
    return ParamSet.from_tensors(params, [fn(i, t) for i, (_, t) in enumerate(params.tensors())])


def init_noise(params: ParamSet, epsilon: float, rng: np.random.Generator) -> GradSet:
    """Gaussian noise whose per-tensor standard deviation is ``epsilon * ||tensor||``."""
    norms = layer_norms(params)
    return _per_tensor(params, lambda i, t: rng.standard_normal(t.shape) * (epsilon * norms[i]))


def normalized_step(direction: GradSet, param_norms: list[float], ratio: float) -> tuple[GradSet, list[bool]]:
    """Rescale each tensor of ``direction`` to norm ``ratio * param_norm``.

    Tensors whose direction is exactly zero contribute a zero step.
    """
    dnorms = layer_norms(direction)
    zero = [d == 0.0 for d in dnorms]
    step = _per_tensor(direction, lambda i, t: np.zeros_like(t) if zero[i]
                       else t * (ratio * param_norms[i] / dnorms[i]))
    return step, zero


def ascend(reference_probs: np.ndarray, params: ParamSet, batch: Batch, delta0: GradSet,
           ratio_per_step: float, steps: int, param_norms: Optional[list[float]] = None,
           monotone: bool = False) -> tuple[GradSet, list[bool]]:
    """Normalized gradient ascent on ``lfg(reference, params + delta, batch)``.

    Starts at ``delta0``; each step follows the KL gradient at the current
    perturbed point, rescaled per tensor to ``ratio_per_step * ||params||``.
    With ``monotone`` a step is kept only if it increases the objective.
    """
    if param_norms is None:
        param_norms = layer_norms(params)
    delta = delta0
    spec = LossSpec.kl(reference_probs)
    current, zero = None, [True] * len(param_norms)
    for _ in range(steps):
        value, g = backward(axpy(params, delta, 1.0), batch, spec)
        current = value if current is None else current
        inc, zero = normalized_step(g, param_norms, ratio_per_step)
        candidate = delta + inc
        if monotone:
            new_value = lfg(reference_probs, axpy(params, candidate, 1.0), batch)
            if new_value <= current:
                break
            current = new_value
        delta = candidate
    return delta, zero


def compute_delta(params: ParamSet, batch: Batch, cfg: StarConfig,
                  rng: np.random.Generator) -> tuple[GradSet, StarStepReport]:
    """Worst-case perturbation for ``batch`` around ``params``."""
    report = StarStepReport(selected_count=len(batch))
    if len(batch) == 0:
        report.skipped, report.reason = True, "no samples"
        return params.zeros_like(), report

    theta_norms = layer_norms(params)
    reference = forward(params, batch).probabilities
    if cfg.perturb_mode == "random":
        z = _per_tensor(params, lambda i, t: rng.standard_normal(t.shape))
        delta0 = params.zeros_like()
        delta, zero = normalized_step(z, theta_norms, cfg.gamma)
    else:
        delta0 = init_noise(params, cfg.epsilon, rng)
        delta, zero = ascend(reference, params, batch, delta0, cfg.gamma / cfg.ascent_steps,
                             cfg.ascent_steps, theta_norms)

    moved = layer_norms(delta - delta0)
    report.lfg_at_delta0 = lfg(reference, axpy(params, delta0, 1.0), batch)
    report.lfg_at_delta = lfg(reference, axpy(params, delta, 1.0), batch)
    report.per_layer_delta_ratio = [m / t if t > 0 else 0.0 for m, t in zip(moved, theta_norms)]
    report.zero_grad_layers = zero
    return delta, report


def star_grad(params: ParamSet, batch: Batch, delta: GradSet) -> tuple[float, GradSet]:
    """KL loss at ``params + delta`` against outputs frozen at ``params``, and its
    gradient taken at the perturbed point (used in place of the gradient at
    ``params``)."""
    params.check_matches(delta)
    if len(batch) == 0:
        return 0.0, params.zeros_like()
    reference = forward(params, batch).probabilities
    return backward(axpy(params, delta, 1.0), batch, LossSpec.kl(reference))


def gather_star_data(params: ParamSet, buffer: ReplayBuffer, current: Batch, cfg: StarConfig,
                     rng: np.random.Generator) -> Batch:
    parts = []
    if cfg.data_source in ("buffer", "both") and len(buffer) > 0:
        # STAR draws with its own generator so the baseline's buffer stream is untouched
        parts.append(buffer.draw(len(current), rng=rng))
    if cfg.data_source in ("current", "both"):
        parts.append(current)
    parts = [Batch(p.features, p.labels) for p in parts if len(p)]
    if not parts:
        return Batch(np.zeros((0, params.in_dim)), np.zeros(0, dtype=np.int64))
    data = parts[0] if len(parts) == 1 else Batch.concat(parts)
    if cfg.selector == "correct_only":
        data = select_correct(params, data)
    return data


def star_step(params: ParamSet, buffer: ReplayBuffer, current: Batch, cfg: StarConfig,
              rng: np.random.Generator) -> tuple[GradSet, StarStepReport]:
    """Unweighted regularizer gradient for one optimizer step."""
    data = gather_star_data(params, buffer, current, cfg, rng)
    delta, report = compute_delta(params, data, cfg, rng)
    if report.skipped:
        return params.zeros_like(), report
    report.star_loss, grad = star_grad(params, data, delta)
    report.star_grad_norm = float(np.linalg.norm(grad.flat()))
    return grad, report
