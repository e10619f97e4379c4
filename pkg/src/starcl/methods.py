"""Baseline rehearsal losses (Sequential, ER, DER++) and the combined SGD step.

DER++ follows its original formulation: on top of cross-entropy on the
incoming batch it replays two independent buffer draws, one matching the
logits stored at insertion time (mean squared error, weight ``alpha``) and one
with plain cross-entropy against the stored labels (weight ``beta``).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from .netcore import Batch, GradSet, LossSpec, ParamSet, axpy, backward
from .rehearsal import ReplayBuffer

log = logging.getLogger(__name__)

METHODS = ("sequential", "er", "derpp")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MethodConfig:
    method: str = "er"
    alpha: float = 0.15
    beta: float = 0.15
    replay_weight: float = 1.0  # ER only
    buffer_batch_size: int = 32

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        for name in ("alpha", "beta", "replay_weight"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.buffer_batch_size < 1:
            raise ConfigError("buffer_batch_size must be positive")


def _accumulate(total: float, grad: GradSet, weight: float, params: ParamSet, batch: Batch,
                spec: LossSpec) -> tuple[float, GradSet]:
    loss, g = backward(params, batch, spec)
    return total + weight * loss, axpy(grad, g, weight)


def cl_loss_grad(params: ParamSet, current: Batch, buffer: ReplayBuffer,
                 cfg: MethodConfig) -> tuple[float, GradSet]:
    """Baseline loss on ``current`` plus the method's replay terms, with exact gradient.

    Replay terms with zero weight are skipped entirely and draw nothing from
    the buffer. An empty buffer also skips them.
    """
    loss, grad = backward(params, current, LossSpec.cross_entropy())
    if cfg.method == "sequential":
        return loss, grad
    if len(buffer) == 0:
        log.debug("replay buffer empty; rehearsal terms skipped")
        return loss, grad

    n = cfg.buffer_batch_size
    if cfg.method == "er":
        if cfg.replay_weight > 0:
            loss, grad = _accumulate(loss, grad, cfg.replay_weight, params, buffer.draw(n),
                                     LossSpec.cross_entropy())
        return loss, grad

    # derpp: the label-replay draw comes first so that alpha = 0, beta = 1
    # consumes the buffer RNG exactly like ER does
    if cfg.beta > 0:
        loss, grad = _accumulate(loss, grad, cfg.beta, params, buffer.draw(n),
                                 LossSpec.cross_entropy())
    if cfg.alpha > 0:
        draw = buffer.draw(n)
        if draw.logits is None:
            raise ConfigError("DER++ drew buffer entries without stored logits")
        loss, grad = _accumulate(loss, grad, cfg.alpha, params, draw,
                                 LossSpec.logit_mse(draw.logits))
    return loss, grad


def combined_update(params: ParamSet, cl_grad: GradSet, star_grad: GradSet,
                    lam: float, lr: float) -> ParamSet:
    """One SGD step on ``cl_grad + lam * star_grad``."""
    return axpy(params, axpy(cl_grad, star_grad, lam), -lr)
