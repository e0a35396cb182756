"""Desk-scale evaluators: synthetic tasks, linear classifiers, and losses.

A LinearModel is an ordinary checkpoint with tensors ``linear.weight``
(shape [d]) and ``classifier.bias`` (shape [1]) predicting
p = logistic(w . x + b), so every merge operator applies to it and a
full merge-search loop can be verified end to end without any ML
framework.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .errors import EmptyMaskSet, LengthMismatch, MalformedModel
from .tensor_store import TensorMap

WEIGHT_NAME = "linear.weight"
BIAS_NAME = "classifier.bias"

PROB_CLAMP = 1e-7

Evaluator = Callable[[TensorMap], float]


@dataclass
class Dataset:
    """Fixed-dimension features with binary labels (1 = unsafe/positive)."""

    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array [n, d]")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("one label per feature row required")
        if self.features.shape[0] < 1:
            raise ValueError("dataset must be nonempty")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class LossWeights:
    """Composite-loss mixing weights plus the adversarial-regularizer knobs."""

    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    alice_alpha: float = 1.0
    vat_eps: float = 0.1

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3, self.alice_alpha) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lambda1 + self.lambda2 + self.lambda3 <= 0:
            raise ValueError("at least one composite weight must be positive")
        if self.vat_eps <= 0:
            raise ValueError("vat_eps must be positive")


def make_linear_model(weight: Sequence[float], bias: float) -> TensorMap:
    return TensorMap({WEIGHT_NAME: np.asarray(weight, dtype=np.float32),
                      BIAS_NAME: np.asarray([bias], dtype=np.float32)})


def linear_params(model: TensorMap) -> tuple[np.ndarray, float]:
    """Extract (w, b) from a checkpoint; raises MalformedModel if absent."""
    if WEIGHT_NAME not in model or BIAS_NAME not in model:
        raise MalformedModel(
            f"checkpoint lacks {WEIGHT_NAME!r}/{BIAS_NAME!r} tensors"
        )
    w = np.asarray(model[WEIGHT_NAME], dtype=np.float64).ravel()
    b = np.asarray(model[BIAS_NAME], dtype=np.float64).ravel()
    if b.size != 1:
        raise MalformedModel(f"{BIAS_NAME!r} must hold a single value")
    return w, float(b[0])


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return float(out[0]) if scalar else out


def predict_proba(model: TensorMap, features: np.ndarray) -> np.ndarray:
    w, b = linear_params(model)
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != w.size:
        raise MalformedModel(
            f"model dimension {w.size} does not match features {features.shape[1]}"
        )
    return sigmoid(features @ w + b)


def _clamp(p):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def f1_score(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """F1 with positive class 1; vacuously 1.0 when nothing is or predicts positive."""
    preds = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(labels, dtype=np.int64)
    if preds.shape != gold.shape or preds.ndim != 1 or preds.size < 1:
        raise LengthMismatch(
            f"predictions {preds.shape} vs labels {gold.shape}"
        )
    if not np.isin(preds, (0, 1)).all() or not np.isin(gold, (0, 1)).all():
        raise ValueError("predictions and labels must be binary")
    tp = int(np.sum((preds == 1) & (gold == 1)))
    fp = int(np.sum((preds == 1) & (gold == 0)))
    fn = int(np.sum((preds == 0) & (gold == 1)))
    if tp == 0:
        return 1.0 if fp == 0 and fn == 0 else 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def cross_entropy(prob: float, label: int) -> float:
    """Binary cross entropy with probabilities clamped away from {0, 1}."""
    p = float(_clamp(prob))
    if label == 1:
        return -math.log(p)
    if label == 0:
        return -math.log(1.0 - p)
    raise ValueError("label must be 0 or 1")


def mlm_loss(masked_token_probs: Sequence[float]) -> float:
    """Mean negative log probability of the true token at masked positions."""
    probs = np.asarray(masked_token_probs, dtype=np.float64)
    if probs.size == 0:
        raise EmptyMaskSet("mlm_loss requires at least one masked position")
    return float(np.mean(-np.log(_clamp(probs))))


def kl_bernoulli(q: float, p: float) -> float:
    """KL(Ber(q) || Ber(p)) with both probabilities clamped."""
    q = float(_clamp(q))
    p = float(_clamp(p))
    return q * math.log(q / p) + (1.0 - q) * math.log((1.0 - q) / (1.0 - p))


def vat_loss(model: TensorMap, inputs: np.ndarray, eps: float,
             steps: int = 1, rng: np.random.Generator | None = None) -> float:
    """Mean KL between clean predictions and worst-case eps-ball perturbations.

    The clean prediction is a constant reference. The inner maximum is
    approximated by normalized gradient ascent on the perturbation,
    re-projected onto the eps sphere each step.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    rng = np.random.default_rng(0) if rng is None else rng
    w, b = linear_params(model)
    features = np.asarray(inputs, dtype=np.float64)
    n, dim = features.shape
    clean = sigmoid(features @ w + b)

    direction = rng.standard_normal((n, dim))
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    fallback = np.zeros((n, dim))
    fallback[:, 0] = 1.0
    direction = np.where(norms > 0, direction / np.maximum(norms, 1e-300), fallback)
    delta = direction * eps

    for _ in range(steps):
        perturbed = sigmoid((features + delta) @ w + b)
        grad = (perturbed - clean)[:, None] * w[None, :]
        gnorms = np.linalg.norm(grad, axis=1, keepdims=True)
        delta = np.where(gnorms > 0, grad / np.maximum(gnorms, 1e-300) * eps, delta)

    perturbed = sigmoid((features + delta) @ w + b)
    kl = np.array([kl_bernoulli(q, p) for q, p in zip(clean, perturbed)])
    return float(np.mean(kl))


def alice_loss(label_loss: float, vat: float, alpha: float) -> float:
    """Gold-label loss plus alpha-weighted virtual adversarial loss."""
    return label_loss + alpha * vat


def composite_loss(mlm: float, alice: float, ce: float,
                   weights: LossWeights) -> float:
    return weights.lambda1 * mlm + weights.lambda2 * alice + weights.lambda3 * ce


def ce_gradient(model: TensorMap, features: np.ndarray,
                labels: np.ndarray) -> tuple[np.ndarray, float]:
    """Analytic gradient of mean binary cross entropy wrt (w, b)."""
    w, b = linear_params(model)
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    p = sigmoid(features @ w + b)
    residual = p - labels
    grad_w = features.T @ residual / len(labels)
    grad_b = float(np.mean(residual))
    return grad_w, grad_b


def mean_ce(model: TensorMap, dataset: Dataset) -> float:
    probs = _clamp(predict_proba(model, dataset.features))
    y = dataset.labels
    return float(np.mean(-(y * np.log(probs) + (1 - y) * np.log(1 - probs))))


def train_linear(dataset: Dataset, epochs: int, learning_rate: float,
                 loss: str = "ce", weights: LossWeights = LossWeights(),
                 seed: int = 0, vat_steps: int = 1) -> TensorMap:
    """Full-batch gradient descent from a zero-initialized linear model."""
    if loss not in ("ce", "ce_plus_vat"):
        raise ValueError(f"unknown loss {loss!r}")
    if learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    w = np.zeros(dataset.dim, dtype=np.float64)
    b = 0.0
    gen = rngmod.stream(seed, "vat-train")
    for _ in range(epochs):
        model = make_linear_model(w, b)
        grad_w, grad_b = ce_gradient(model, dataset.features, dataset.labels)
        if loss == "ce_plus_vat":
            vw, vb = _vat_gradient(w, b, dataset.features, weights.vat_eps,
                                   vat_steps, gen)
            grad_w = grad_w + weights.alice_alpha * vw
            grad_b = grad_b + weights.alice_alpha * vb
        w -= learning_rate * grad_w
        b -= learning_rate * grad_b
    return make_linear_model(w, b)


def _vat_gradient(w: np.ndarray, b: float, features: np.ndarray, eps: float,
                  steps: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Gradient of the VAT penalty wrt (w, b) at the fixed worst-case delta."""
    n, dim = features.shape
    clean = sigmoid(features @ w + b)
    direction = rng.standard_normal((n, dim))
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    fallback = np.zeros((n, dim))
    fallback[:, 0] = 1.0
    direction = np.where(norms > 0, direction / np.maximum(norms, 1e-300), fallback)
    delta = direction * eps
    for _ in range(steps):
        perturbed = sigmoid((features + delta) @ w + b)
        grad = (perturbed - clean)[:, None] * w[None, :]
        gnorms = np.linalg.norm(grad, axis=1, keepdims=True)
        delta = np.where(gnorms > 0, grad / np.maximum(gnorms, 1e-300) * eps, delta)
    shifted = features + delta
    perturbed = sigmoid(shifted @ w + b)
    residual = perturbed - clean
    grad_w = shifted.T @ residual / n
    grad_b = float(np.mean(residual))
    return grad_w, grad_b


@dataclass(frozen=True)
class TaskSpec:
    """Synthetic two-cluster task shape."""

    dim: int = 2
    n_train_per_slice: int = 200
    n_slices: int = 2
    n_val: int = 200
    cluster_separation: float = 3.0

    def __post_init__(self):
        if min(self.dim, self.n_train_per_slice, self.n_slices, self.n_val) < 1:
            raise ValueError("task spec fields must be positive")
        if self.cluster_separation <= 0:
            raise ValueError("cluster_separation must be positive")


def _two_clusters(gen: np.random.Generator, n: int, dim: int,
                  center_pos: np.ndarray, center_neg: np.ndarray,
                  name: str) -> Dataset:
    n_pos = n // 2
    n_neg = n - n_pos
    x_pos = gen.standard_normal((n_pos, dim)) + center_pos
    x_neg = gen.standard_normal((n_neg, dim)) + center_neg
    features = np.vstack([x_pos, x_neg])
    labels = np.concatenate([np.ones(n_pos, dtype=np.int64),
                             np.zeros(n_neg, dtype=np.int64)])
    order = gen.permutation(n)
    return Dataset(features[order], labels[order], name)


def make_synthetic_task(seed: int, spec: TaskSpec) -> tuple[list[Dataset], Dataset]:
    """Gaussian two-cluster task split into overlapping but distinct slices.

    Each slice shifts both cluster centers by a slice-specific offset so
    models trained per slice genuinely differ; the validation set is
    drawn from the unshifted base distribution.
    """
    base = rngmod.stream(seed, "task-direction")
    direction = base.standard_normal(spec.dim)
    norm = np.linalg.norm(direction)
    if norm == 0:
        direction = np.zeros(spec.dim)
        direction[0] = 1.0
    else:
        direction = direction / norm
    center_pos = 0.5 * spec.cluster_separation * direction
    center_neg = -0.5 * spec.cluster_separation * direction

    slices = []
    for s in range(spec.n_slices):
        gen = rngmod.stream(seed, "slice", s)
        offset = gen.standard_normal(spec.dim) * (spec.cluster_separation / 5.0)
        slices.append(
            _two_clusters(gen, spec.n_train_per_slice, spec.dim,
                          center_pos + offset, center_neg + offset,
                          name=f"slice-{s}")
        )
    val_gen = rngmod.stream(seed, "validation")
    validation = _two_clusters(val_gen, spec.n_val, spec.dim,
                               center_pos, center_neg, name="validation")
    return slices, validation


def known_optimum_evaluator(target: TensorMap) -> Evaluator:
    """Score exp(-||theta - target|| / ||target||): 1.0 at the target."""
    names = target.names()
    flat_target = np.concatenate(
        [np.asarray(target[n], dtype=np.float64).ravel() for n in names]
    ) if names else np.array([])
    target_norm = float(np.linalg.norm(flat_target))
    if target_norm == 0.0:
        raise ValueError("known_optimum_evaluator requires a nonzero target")
    shapes = {n: target[n].shape for n in names}

    def evaluate(candidate: TensorMap) -> float:
        pieces = []
        for name in names:
            if name not in candidate or candidate[name].shape != shapes[name]:
                raise MalformedModel(f"candidate missing tensor {name!r}")
            pieces.append(np.asarray(candidate[name], dtype=np.float64).ravel())
        distance = float(np.linalg.norm(np.concatenate(pieces) - flat_target))
        return math.exp(-distance / target_norm)

    return evaluate


def classifier_evaluator(validation: Dataset) -> Evaluator:
    """F1 of thresholded (p > 0.5) predictions on the validation set."""

    def evaluate(candidate: TensorMap) -> float:
        probs = predict_proba(candidate, validation.features)
        preds = (probs > 0.5).astype(np.int64)
        return f1_score(preds, validation.labels)

    return evaluate
