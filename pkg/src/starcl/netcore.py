"""Feed-forward classifier with exact gradients.

Parameters live in a :class:`ParamSet`, an ordered tuple of fully connected
layers. Gradients and perturbations reuse the same container (``GradSet`` is an
alias), so arithmetic between them is structure-checked.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

PROB_FLOOR = 1e-12

LOSS_KINDS = ("ce", "mse", "kl")


class ShapeError(ValueError):
    pass


class StructureError(ValueError):
    pass


@dataclass(frozen=True)
class Layer:
    name: str
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)


@dataclass(frozen=True)
class ParamSet:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise ShapeError(
                    f"layer {nxt.name!r} expects {nxt.weight.shape[0]} inputs, "
                    f"{prev.name!r} produces {prev.weight.shape[1]}"
                )
        for layer in self.layers:
            if layer.bias.shape != (layer.weight.shape[1],):
                raise ShapeError(f"layer {layer.name!r}: bias shape {layer.bias.shape} "
                                 f"does not match weight {layer.weight.shape}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(layer.name for layer in self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """Yield ``(name, array)`` for every weight and bias, in layer order."""
        for layer in self.layers:
            yield f"{layer.name}.weight", layer.weight
            yield f"{layer.name}.bias", layer.bias

    def num_params(self) -> int:
        return sum(t.size for _, t in self.tensors())

    def check_matches(self, other: "ParamSet") -> None:
        if self.names != other.names:
            raise StructureError(f"layer lists differ: {self.names} vs {other.names}")
        for a, b in zip(self.layers, other.layers):
            if a.weight.shape != b.weight.shape or a.bias.shape != b.bias.shape:
                raise StructureError(f"layer {a.name!r} shapes differ")

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ParamSet":
        return ParamSet(tuple(Layer(l.name, fn(l.weight), fn(l.bias)) for l in self.layers))

    def zip_map(self, other: "ParamSet", fn) -> "ParamSet":
        self.check_matches(other)
        return ParamSet(tuple(
            Layer(a.name, fn(a.weight, b.weight), fn(a.bias, b.bias))
            for a, b in zip(self.layers, other.layers)
        ))

    def __add__(self, other: "ParamSet") -> "ParamSet":
        return self.zip_map(other, np.add)

    def __sub__(self, other: "ParamSet") -> "ParamSet":
        return self.zip_map(other, np.subtract)

    def scale(self, factor: float) -> "ParamSet":
        return self.map(lambda t: factor * t)

    def zeros_like(self) -> "ParamSet":
        return self.map(np.zeros_like)

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for _, t in self.tensors()])

    def from_flat(self, vec: np.ndarray) -> "ParamSet":
        """Inverse of :meth:`flat` using this set's shapes."""
        layers, i = [], 0
        for layer in self.layers:
            w = vec[i:i + layer.weight.size].reshape(layer.weight.shape)
            i += layer.weight.size
            b = vec[i:i + layer.bias.size].reshape(layer.bias.shape)
            i += layer.bias.size
            layers.append(Layer(layer.name, w.copy(), b.copy()))
        return ParamSet(tuple(layers))

    @classmethod
    def from_tensors(cls, template: "ParamSet", arrays: Sequence[np.ndarray]) -> "ParamSet":
        """Rebuild from a per-tensor sequence ordered like :meth:`tensors`."""
        arrays = list(arrays)
        if len(arrays) != 2 * len(template.layers):
            raise StructureError("tensor count does not match template")
        return ParamSet(tuple(
            Layer(l.name, arrays[2 * i], arrays[2 * i + 1]) for i, l in enumerate(template.layers)
        ))


GradSet = ParamSet


@dataclass(frozen=True)
class Batch:
    features: np.ndarray
    labels: np.ndarray
    logits: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (n,):
            raise ShapeError(f"{n} feature rows but labels have shape {self.labels.shape}")
        if self.logits is not None and self.logits.shape[0] != n:
            raise ShapeError(f"{n} feature rows but logits have {self.logits.shape[0]}")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.features[idx], self.labels[idx],
                     None if self.logits is None else self.logits[idx])

    @staticmethod
    def concat(batches: Sequence["Batch"]) -> "Batch":
        logits = None
        if all(b.logits is not None for b in batches):
            logits = np.concatenate([b.logits for b in batches])
        return Batch(np.concatenate([b.features for b in batches]),
                     np.concatenate([b.labels for b in batches]), logits)


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    probabilities: np.ndarray
    predicted_labels: np.ndarray


@dataclass(frozen=True)
class LossSpec:
    """Which loss ``backward`` differentiates, and against what target.

    ``ce`` takes integer labels, ``mse`` takes target logits, ``kl`` takes fixed
    reference probabilities (the reference is a constant, never differentiated).
    """
    kind: str
    target: Optional[np.ndarray] = None

    @classmethod
    def cross_entropy(cls) -> "LossSpec":
        return cls("ce")

    @classmethod
    def logit_mse(cls, target_logits: np.ndarray) -> "LossSpec":
        return cls("mse", target_logits)

    @classmethod
    def kl(cls, reference_probs: np.ndarray) -> "LossSpec":
        return cls("kl", reference_probs)


def init_mlp(in_dim: int, hidden: Sequence[int], num_classes: int,
             rng: np.random.Generator) -> ParamSet:
    """He-normal weights, zero biases."""
    sizes = [in_dim, *hidden, num_classes]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        layers.append(Layer(f"fc{i}", w, np.zeros(fan_out)))
    return ParamSet(tuple(layers))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_input(params: ParamSet, features: np.ndarray) -> None:
    if features.ndim != 2 or features.shape[1] != params.in_dim:
        raise ShapeError(f"layer {params.layers[0].name!r} expects {params.in_dim} input "
                         f"features, batch has shape {features.shape}")


def _activations(params: ParamSet, x: np.ndarray) -> list[np.ndarray]:
    # [input, hidden post-ReLU ..., logits]
    acts = [x]
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        z = acts[-1] @ layer.weight + layer.bias
        acts.append(z if i == last else np.maximum(z, 0.0))
    return acts


def forward(params: ParamSet, batch: Batch) -> Prediction:
    _check_input(params, batch.features)
    logits = _activations(params, batch.features)[-1]
    probs = softmax(logits)
    return Prediction(logits, probs, np.argmax(probs, axis=1))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Summed row-wise KL(p || q), with 0 log 0 = 0 and q floored at 1e-12."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    if p.shape != q.shape:
        raise ShapeError(f"KL operands differ in shape: {p.shape} vs {q.shape}")
    pc = np.clip(p, PROB_FLOOR, 1.0)
    qc = np.clip(q, PROB_FLOOR, 1.0)
    terms = np.where(p > 0, p * (np.log(pc) - np.log(qc)), 0.0)
    # float cancellation can dip a hair below zero when p ~= q
    return float(max(terms.sum(), 0.0))


def _loss_and_dlogits(logits: np.ndarray, batch: Batch, spec: LossSpec) -> tuple[float, np.ndarray]:
    n, k = logits.shape
    if spec.kind == "ce":
        if batch.labels.size and (batch.labels.min() < 0 or batch.labels.max() >= k):
            raise ShapeError(f"labels outside [0, {k})")
        logp = log_softmax(logits)
        rows = np.arange(n)
        loss = -logp[rows, batch.labels].sum() / n
        d = np.exp(logp)
        d[rows, batch.labels] -= 1.0
        return float(loss), d / n
    if spec.kind == "mse":
        if spec.target is None or spec.target.shape != logits.shape:
            raise ShapeError("logit-MSE target must match the logits' shape")
        diff = logits - spec.target
        return float((diff ** 2).sum() / diff.size), 2.0 * diff / diff.size
    if spec.kind == "kl":
        ref = spec.target
        if ref is None or ref.shape != logits.shape:
            raise ShapeError("KL reference probabilities must match the logits' shape")
        # q is built exactly as forward() builds probabilities so that a
        # reference taken from the same parameters gives a bitwise-zero loss
        # and gradient.
        q = softmax(logits)
        logref = np.log(np.clip(ref, PROB_FLOOR, 1.0))
        logq = np.log(np.clip(q, PROB_FLOOR, 1.0))
        loss = np.where(ref > 0, ref * (logref - logq), 0.0).sum()
        # reference rows sum to one, so d/dz = q - r
        return float(max(loss, 0.0)), q - ref
    raise ValueError(f"unsupported loss {spec.kind!r}; expected one of {LOSS_KINDS}")


def loss_value(params: ParamSet, batch: Batch, spec: LossSpec) -> float:
    _check_input(params, batch.features)
    if len(batch) == 0:
        return 0.0
    return _loss_and_dlogits(_activations(params, batch.features)[-1], batch, spec)[0]


def backward(params: ParamSet, batch: Batch, spec: LossSpec) -> tuple[float, GradSet]:
    """Loss value and its exact gradient with respect to every parameter."""
    if spec.kind not in LOSS_KINDS:
        raise ValueError(f"unsupported loss {spec.kind!r}; expected one of {LOSS_KINDS}")
    _check_input(params, batch.features)
    if len(batch) == 0:
        return 0.0, params.zeros_like()
    acts = _activations(params, batch.features)
    loss, delta = _loss_and_dlogits(acts[-1], batch, spec)
    grads: list[Layer] = []
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        a_in = acts[i]
        grads.append(Layer(layer.name, a_in.T @ delta, delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ layer.weight.T) * (a_in > 0)
    return loss, ParamSet(tuple(reversed(grads)))


def axpy(params: ParamSet, direction: GradSet, scale: float) -> ParamSet:
    """``params + scale * direction`` as a new ParamSet."""
    return params.zip_map(direction, lambda p, d: p + scale * d)


def layer_norms(g: GradSet) -> list[float]:
    """Euclidean norm of each weight tensor and each bias vector, in order."""
    return [float(np.linalg.norm(t.ravel())) for _, t in g.tensors()]
