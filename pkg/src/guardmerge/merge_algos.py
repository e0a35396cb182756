"""Checkpoint merging operators: weighted soup, TIES, DARE, and SLERP.

All operators are pure functions: identical inputs (and seed, for DARE)
produce bitwise-identical outputs. Arithmetic runs in float64 internally
and is cast to the checkpoint dtype (float32) only on assembly, so that
degenerate merges (n copies of one model) reproduce the input exactly.

Tensors not selected by the merge type are copied verbatim from a
carrier checkpoint (by convention the best-scoring input model).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import rng as rngmod
from .errors import IncompatibleCheckpoints, InvalidDropRate, ZeroNormVector
from .param_groups import GroupRules, MergeType, DEFAULT_RULES, select_params
from .tensor_store import TensorMap, require_compat

ALGORITHMS = ("soup", "ties", "dare", "slerp")
SIGN_MODES = ("weighted", "unweighted")
DISJOINT_MODES = ("weighted_mean", "plain_mean")

WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True)
class MergeSpec:
    """Algorithm choice plus everything needed to reproduce one merge."""

    algorithm: str
    weights: tuple[float, ...]
    tau: MergeType = MergeType.FULL
    ties_k: float = 20.0          # trim percentile, (0, 100]
    lam: float = 1.0              # scale applied to the merged task vector
    dare_p: float = 0.9           # per-element drop rate, [0, 1)
    slerp_t: float = 0.5          # interpolation parameter, [0, 1]
    collinear_eps: float = 1e-5   # |cos w| > 1 - eps falls back to LERP
    sign_mode: str = "weighted"
    disjoint_mode: str = "weighted_mean"
    per_tensor_trim: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        object.__setattr__(self, "tau", MergeType.parse(self.tau))
        weights = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "weights", weights)
        if not weights:
            raise ValueError("weights must be nonempty")
        if any(w < 0 for w in weights):
            raise ValueError("weights must be nonnegative")
        if abs(math.fsum(weights) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1, got {math.fsum(weights)!r}")
        if self.algorithm == "slerp" and len(weights) != 2:
            raise ValueError("slerp merges exactly two models")
        if not 0.0 < self.ties_k <= 100.0:
            raise ValueError("ties_k must be in (0, 100]")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not 0.0 <= self.slerp_t <= 1.0:
            raise ValueError("slerp_t must be in [0, 1]")
        if self.collinear_eps <= 0:
            raise ValueError("collinear_eps must be positive")
        if self.sign_mode not in SIGN_MODES:
            raise ValueError(f"unknown sign_mode {self.sign_mode!r}")
        if self.disjoint_mode not in DISJOINT_MODES:
            raise ValueError(f"unknown disjoint_mode {self.disjoint_mode!r}")


@dataclass
class TaskVector:
    """Per-tensor difference model - init over a fixed name subset.

    Values are kept in float64 so compositions of trim / sign election /
    disjoint merge stay exact relative to the float32 checkpoints.
    """

    values: dict[str, np.ndarray]

    def names(self) -> list[str]:
        return sorted(self.values)

    def to_map(self) -> TensorMap:
        return TensorMap(self.values)


def _f64(arr: np.ndarray) -> np.ndarray:
    return np.asarray(arr, dtype=np.float64)


def task_vector(model: TensorMap, init: TensorMap, names: Sequence[str]) -> TaskVector:
    """Elementwise model - init restricted to `names`."""
    ordered = sorted(names)
    for name in ordered:
        if name not in model or name not in init:
            raise IncompatibleCheckpoints(f"tensor {name!r} missing from model or init")
        if model[name].shape != init[name].shape:
            raise IncompatibleCheckpoints(f"tensor {name!r} shape mismatch")
    return TaskVector({n: _f64(model[n]) - _f64(init[n]) for n in ordered})


def trim_topk(delta: TaskVector, k: float, per_tensor: bool = False) -> TaskVector:
    """Zero all but the ceil(k% * elements) largest-magnitude entries.

    The threshold is global across the task vector's tensors unless
    `per_tensor` is set. Ties at the threshold keep the earlier element
    in canonical (lexicographic name, row-major) order.
    """
    if not 0.0 < k <= 100.0:
        raise ValueError("trim percentile must be in (0, 100]")

    def _keep_mask(flat: np.ndarray) -> np.ndarray:
        total = flat.size
        keep = math.ceil(k * total / 100.0)
        if keep >= total:
            return np.ones(total, dtype=bool)
        order = np.argsort(-np.abs(flat), kind="stable")
        mask = np.zeros(total, dtype=bool)
        mask[order[:keep]] = True
        return mask

    names = delta.names()
    if per_tensor:
        out = {}
        for name in names:
            arr = delta.values[name]
            if arr.size == 0:
                out[name] = arr.copy()
                continue
            mask = _keep_mask(arr.ravel()).reshape(arr.shape)
            out[name] = np.where(mask, arr, 0.0)
        return TaskVector(out)

    flat = np.concatenate([delta.values[n].ravel() for n in names]) if names else np.array([])
    if flat.size == 0:
        return TaskVector({n: delta.values[n].copy() for n in names})
    mask = _keep_mask(flat)
    out = {}
    pos = 0
    for name in names:
        arr = delta.values[name]
        piece = mask[pos:pos + arr.size].reshape(arr.shape)
        out[name] = np.where(piece, arr, 0.0)
        pos += arr.size
    return TaskVector(out)


def elect_sign(deltas: Sequence[TaskVector], weights: Sequence[float],
               mode: str = "weighted") -> TensorMap:
    """Elementwise aggregate sign (+1/0/-1) across trimmed task vectors."""
    if mode not in SIGN_MODES:
        raise ValueError(f"unknown sign_mode {mode!r}")
    if len(deltas) != len(weights):
        raise ValueError("one weight per task vector required")
    names = deltas[0].names()
    signs = {}
    for name in names:
        stack = np.stack([d.values[name] for d in deltas])
        if mode == "weighted":
            total = np.tensordot(np.asarray(weights, dtype=np.float64), stack, axes=1)
        else:
            total = stack.sum(axis=0)
        signs[name] = np.sign(total)
    return TensorMap(signs)


def disjoint_merge(deltas: Sequence[TaskVector], weights: Sequence[float],
                   signs: TensorMap, mode: str = "weighted_mean") -> TaskVector:
    """Average task vectors over the models agreeing with the elected sign.

    Elements whose elected sign is zero, or where no model agrees, merge
    to zero.
    """
    if mode not in DISJOINT_MODES:
        raise ValueError(f"unknown disjoint_mode {mode!r}")
    w = np.asarray(weights, dtype=np.float64)
    out = {}
    for name in deltas[0].names():
        stack = np.stack([d.values[name] for d in deltas])
        elected = _f64(signs[name])
        agree = (np.sign(stack) == elected) & (elected != 0)
        if mode == "weighted_mean":
            num = np.einsum("t,t...->...", w, np.where(agree, stack, 0.0))
            den = np.einsum("t,t...->...", w, agree.astype(np.float64))
        else:
            num = np.where(agree, stack, 0.0).sum(axis=0)
            den = agree.sum(axis=0).astype(np.float64)
        out[name] = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return TaskVector(out)


def _assemble(selected: Mapping[str, np.ndarray], carrier: TensorMap) -> TensorMap:
    """Merged values for selected names, carrier tensors for the rest."""
    out = {}
    for name, arr in carrier.items():
        out[name] = selected[name] if name in selected else arr
    return TensorMap(out)


def ties_merge(models: Sequence[TensorMap], init: TensorMap, spec: MergeSpec,
               names: Sequence[str], carrier: TensorMap | None = None) -> TensorMap:
    """Trim, elect signs, disjoint-merge, then init + lam * merged delta."""
    carrier = models[0] if carrier is None else carrier
    require_compat([*models, init, carrier], "ties_merge")
    deltas = [task_vector(m, init, names) for m in models]
    trimmed = [trim_topk(d, spec.ties_k, spec.per_tensor_trim) for d in deltas]
    signs = elect_sign(trimmed, spec.weights, spec.sign_mode)
    merged = disjoint_merge(trimmed, spec.weights, signs, spec.disjoint_mode)
    selected = {
        name: _f64(init[name]) + spec.lam * merged.values[name]
        for name in merged.names()
    }
    return _assemble(selected, carrier)


def soup_merge(models: Sequence[TensorMap], weights: Sequence[float],
               names: Sequence[str], carrier: TensorMap | None = None) -> TensorMap:
    """Elementwise weighted average over the selected names."""
    carrier = models[0] if carrier is None else carrier
    require_compat([*models, carrier], "soup_merge")
    w = np.asarray(weights, dtype=np.float64)
    if w.size != len(models):
        raise ValueError("one weight per model required")
    selected = {}
    for name in sorted(names):
        stack = np.stack([_f64(m[name]) for m in models])
        selected[name] = np.einsum("t,t...->...", w, stack)
    return _assemble(selected, carrier)


def dare_sparsify(sft: TensorMap, pre: TensorMap, p: float,
                  rng: np.random.Generator) -> TensorMap:
    """Drop task-vector elements with probability p, rescale the rest by 1/(1-p).

    The kept delta is unbiased: E[mask/(1-p)] = 1 per element. Masks are
    drawn per tensor in canonical name order from `rng`.
    """
    if not 0.0 <= p < 1.0:
        raise InvalidDropRate(f"drop rate must be in [0, 1), got {p}")
    require_compat([sft, pre], "dare_sparsify")
    out = {}
    for name, arr in sft.items():
        delta = _f64(arr) - _f64(pre[name])
        mask = rng.random(arr.shape) < (1.0 - p)
        out[name] = _f64(pre[name]) + np.where(mask, delta, 0.0) / (1.0 - p)
    return TensorMap(out)


def dare_merge(models: Sequence[TensorMap], pre: TensorMap, spec: MergeSpec,
               names: Sequence[str], carrier: TensorMap | None = None) -> TensorMap:
    """pre + lam * sum of independently sparsified task vectors.

    Each (model, tensor) pair draws its mask from a counter-based stream
    keyed by (seed, model index, tensor name), so the result is bitwise
    independent of tensor traversal order. Model deltas are scaled by
    n * w_k, so uniform weights reduce to the plain unweighted sum.
    """
    if not 0.0 <= spec.dare_p < 1.0:
        raise InvalidDropRate(f"drop rate must be in [0, 1), got {spec.dare_p}")
    carrier = models[0] if carrier is None else carrier
    require_compat([*models, pre, carrier], "dare_merge")
    ordered = sorted(names)
    n = len(models)
    total = {name: np.zeros(pre[name].shape, dtype=np.float64) for name in ordered}
    for k, model in enumerate(models):
        scale = n * spec.weights[k]
        for name in ordered:
            delta = _f64(model[name]) - _f64(pre[name])
            gen = rngmod.stream(spec.seed, "dare-mask", k, name)
            mask = gen.random(delta.shape) < (1.0 - spec.dare_p)
            total[name] += scale * np.where(mask, delta, 0.0) / (1.0 - spec.dare_p)
    selected = {
        name: _f64(pre[name]) + spec.lam * total[name] for name in ordered
    }
    return _assemble(selected, carrier)


def slerp(v0: np.ndarray, v1: np.ndarray, t: float,
          eps: float = 1e-5) -> np.ndarray:
    """Spherical linear interpolation of two flat vectors.

    Falls back to linear interpolation when the vectors are nearly
    collinear (|cos w| > 1 - eps), where the spherical formula divides
    by sin w -> 0.
    """
    a = np.asarray(v0, dtype=np.float64).ravel()
    b = np.asarray(v1, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("slerp inputs must have equal length")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroNormVector("slerp requires nonzero-norm vectors")
    cos = float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))
    if abs(cos) > 1.0 - eps:
        return (1.0 - t) * a + t * b
    omega = math.acos(cos)
    sin_omega = math.sin(omega)
    return (math.sin((1.0 - t) * omega) / sin_omega) * a \
        + (math.sin(t * omega) / sin_omega) * b


def slerp_merge(model0: TensorMap, model1: TensorMap, spec: MergeSpec,
                names: Sequence[str], carrier: TensorMap | None = None) -> TensorMap:
    """Per-tensor SLERP of flattened buffers; all-zero tensors interpolate linearly."""
    carrier = model0 if carrier is None else carrier
    require_compat([model0, model1, carrier], "slerp_merge")
    t = spec.slerp_t
    selected = {}
    for name in sorted(names):
        a = _f64(model0[name]).ravel()
        b = _f64(model1[name]).ravel()
        if np.linalg.norm(a) == 0.0 or np.linalg.norm(b) == 0.0 or a.size == 0:
            merged = (1.0 - t) * a + t * b
        else:
            merged = slerp(a, b, t, spec.collinear_eps)
        selected[name] = merged.reshape(model0[name].shape)
    return _assemble(selected, carrier)


def apply_merge(models: Sequence[TensorMap], init: TensorMap | None,
                spec: MergeSpec, rules: GroupRules = DEFAULT_RULES,
                carrier: TensorMap | None = None) -> TensorMap:
    """Dispatch on spec.algorithm with tau-based parameter selection."""
    if not models:
        raise ValueError("apply_merge requires at least one model")
    if len(spec.weights) != len(models):
        raise ValueError(
            f"spec carries {len(spec.weights)} weights for {len(models)} models"
        )
    require_compat(list(models), "apply_merge")
    names = sorted(select_params(models[0].names(), spec.tau, rules))
    if spec.algorithm == "soup":
        return soup_merge(models, spec.weights, names, carrier)
    if spec.algorithm == "slerp":
        if len(models) != 2:
            raise ValueError("slerp merges exactly two models")
        return slerp_merge(models[0], models[1], spec, names, carrier)
    if init is None:
        raise ValueError(f"{spec.algorithm} requires an init checkpoint")
    if spec.algorithm == "ties":
        return ties_merge(models, init, spec, names, carrier)
    return dare_merge(models, init, spec, names, carrier)
