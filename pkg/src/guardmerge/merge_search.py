"""Bandit-driven merge search over (weight vector, merge type).

Each iteration samples a candidate point, merges, scores the merged
checkpoint with a pluggable evaluator, and updates per-model and
per-merge-type Beta posteriors. Two update rules are provided:

* ``algorithm1`` — sigmoid-shaped increments gated on positive weight,
  identical across participating arms.
* ``expected_reward`` — weight-proportional increments, which is the
  rule that actually differentiates the per-model posteriors.

Per-iteration randomness comes from counter-based child streams of the
master seed, so extending a run never perturbs earlier iterations.
"""

from __future__ import annotations

import math
import shlex
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .errors import EvaluatorFailure, ScoreOutOfRange
from .merge_algos import ALGORITHMS, MergeSpec, apply_merge
from .param_groups import DEFAULT_RULES, GroupRules, MergeType
from .tensor_store import TensorMap, require_compat, save_checkpoint

SAMPLERS = ("thompson", "epsilon_greedy", "random")
UPDATE_RULES = ("algorithm1", "expected_reward")
TAU_SAMPLING = ("argmax", "categorical")
FBEST_TIMING = ("pre", "post")

Evaluator = Callable[[TensorMap], float]


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


@dataclass
class BetaArm:
    alpha: float = 1.0
    beta: float = 1.0

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


@dataclass
class IterationRecord:
    iteration: int
    weights: tuple[float, ...]
    tau: str
    score: float
    best: float
    wall_ms: int


@dataclass
class BanditState:
    """Beta posteriors per model and per merge type, plus best-so-far tracking."""

    model_arms: list[BetaArm]
    tau_arms: dict[MergeType, BetaArm]
    best_params: TensorMap
    best_score: float = 0.0
    history: list[IterationRecord] = field(default_factory=list)

    @classmethod
    def fresh(cls, n_models: int, tau_choices: Sequence[MergeType],
              init: TensorMap) -> "BanditState":
        return cls(
            model_arms=[BetaArm() for _ in range(n_models)],
            tau_arms={tau: BetaArm() for tau in tau_choices},
            best_params=init,
        )


@dataclass(frozen=True)
class SearchConfig:
    """Sampler, update rule, iteration budget, and merge hyperparameters."""

    sampler: str = "thompson"
    update_rule: str = "algorithm1"
    iterations: int = 50
    top_k_models: int = 6
    epsilon: float = 0.1
    algorithm: str = "ties"
    tau_choices: tuple[MergeType, ...] = (
        MergeType.FULL, MergeType.ATTENTION, MergeType.FFN, MergeType.BASE,
    )
    tau_sampling: str = "argmax"
    fbest_timing: str = "pre"
    ties_k: float = 20.0
    lam: float = 1.0
    dare_p: float = 0.9
    slerp_t: float = 0.5
    collinear_eps: float = 1e-5
    sign_mode: str = "weighted"
    disjoint_mode: str = "weighted_mean"
    per_tensor_trim: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.update_rule not in UPDATE_RULES:
            raise ValueError(f"unknown update rule {self.update_rule!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.top_k_models < 1:
            raise ValueError("top_k_models must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.tau_sampling not in TAU_SAMPLING:
            raise ValueError(f"unknown tau_sampling {self.tau_sampling!r}")
        if self.fbest_timing not in FBEST_TIMING:
            raise ValueError(f"unknown fbest_timing {self.fbest_timing!r}")
        taus = tuple(MergeType.parse(t) for t in self.tau_choices)
        if not taus:
            raise ValueError("tau_choices must be nonempty")
        object.__setattr__(self, "tau_choices", taus)


@dataclass
class SearchResult:
    best_params: TensorMap
    best_score: float
    history: list[IterationRecord]
    state: BanditState | None = None
    standalone_scores: list[float] | None = None


def _normalize(draws: np.ndarray) -> np.ndarray:
    total = draws.sum()
    if total <= 0:
        return np.full(draws.size, 1.0 / draws.size)
    return draws / total


def thompson_sample(state: BanditState, rng: np.random.Generator,
                    tau_sampling: str = "argmax") -> tuple[np.ndarray, MergeType]:
    """Draw per-model Beta weights (normalized) and a merge type."""
    draws = np.array([rng.beta(arm.alpha, arm.beta) for arm in state.model_arms])
    weights = _normalize(draws)
    taus = list(state.tau_arms)
    if len(taus) == 1:
        return weights, taus[0]
    if tau_sampling == "argmax":
        samples = [rng.beta(arm.alpha, arm.beta) for arm in state.tau_arms.values()]
        return weights, taus[int(np.argmax(samples))]
    means = np.array([arm.mean for arm in state.tau_arms.values()])
    probs = means / means.sum()
    return weights, taus[int(rng.choice(len(taus), p=probs))]


def random_sample(rng: np.random.Generator, n_models: int,
                  tau_set: Sequence[MergeType]) -> tuple[np.ndarray, MergeType]:
    """Uniform exploration: flat Dirichlet weights, uniform merge type."""
    weights = rng.dirichlet(np.ones(n_models))
    tau = tau_set[int(rng.integers(len(tau_set)))]
    return weights, tau


def epsilon_greedy_sample(state: BanditState, history: Sequence[IterationRecord],
                          epsilon: float, rng: np.random.Generator,
                          ) -> tuple[np.ndarray, MergeType]:
    """Best observed point with probability 1 - epsilon, else explore."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    taus = list(state.tau_arms)
    explore = rng.random() < epsilon
    if explore or not history:
        return random_sample(rng, len(state.model_arms), taus)
    best = history[0]
    for record in history[1:]:
        if record.score > best.score:
            best = record
    return np.asarray(best.weights, dtype=np.float64), MergeType.parse(best.tau)


def update(state: BanditState, weights: Sequence[float], tau: MergeType | str,
           score: float, rule: str = "algorithm1",
           params: TensorMap | None = None,
           fbest_timing: str = "pre") -> BanditState:
    """Update posteriors and best-so-far tracking from one observation.

    With fbest_timing="pre" (default) the sigmoid shaping compares the
    score against the best value from before this observation; "post"
    applies the best update first.
    """
    if rule not in UPDATE_RULES:
        raise ValueError(f"unknown update rule {rule!r}")
    if fbest_timing not in FBEST_TIMING:
        raise ValueError(f"unknown fbest_timing {fbest_timing!r}")
    if not 0.0 <= score <= 1.0:
        raise ScoreOutOfRange(f"score {score!r} outside [0, 1]")
    tau = MergeType.parse(tau)
    if len(weights) != len(state.model_arms):
        raise ValueError("one weight per model arm required")

    def apply_best():
        if score > state.best_score:
            state.best_score = score
            if params is not None:
                state.best_params = params

    if fbest_timing == "post":
        apply_best()
    reference = state.best_score
    if rule == "algorithm1":
        shaped = _sigmoid(score - reference)
        d_alpha = max(score, 1.0 - score) * shaped + score
        d_beta = min(score, 1.0 - score) * shaped + (1.0 - score)
        for w, arm in zip(weights, state.model_arms):
            if w > 0:
                arm.alpha += d_alpha
                arm.beta += d_beta
    else:
        for w, arm in zip(weights, state.model_arms):
            arm.alpha += score * w
            arm.beta += (1.0 - score) * w
    if tau in state.tau_arms:
        state.tau_arms[tau].alpha += score
        state.tau_arms[tau].beta += 1.0 - score
    if fbest_timing == "pre":
        apply_best()
    return state


def _rank_models(models: Sequence[TensorMap], evaluator: Evaluator,
                 top_k: int) -> tuple[list[TensorMap], list[float]]:
    scores = [float(evaluator(m)) for m in models]
    order = sorted(range(len(models)), key=lambda i: -scores[i])
    kept = order[:top_k]
    return [models[i] for i in kept], scores


def run_search(models: Sequence[TensorMap], init: TensorMap,
               evaluator: Evaluator, config: SearchConfig,
               rules: GroupRules = DEFAULT_RULES) -> SearchResult:
    """Run the full sample -> merge -> evaluate -> update loop.

    Makes exactly config.iterations evaluator calls, plus one standalone
    call per input model only when more models are supplied than
    top_k_models (to rank and keep the best; the first kept model is the
    carrier for unmerged tensors).
    """
    if not models:
        raise ValueError("run_search requires at least one model")
    require_compat([*models, init], "run_search")

    standalone: list[float] | None = None
    pool = list(models)
    top_k = min(config.top_k_models, len(pool))
    if top_k < len(pool):
        pool, standalone = _rank_models(pool, evaluator, top_k)
    if config.algorithm == "slerp" and len(pool) != 2:
        raise ValueError("slerp search requires exactly two models after ranking")

    state = BanditState.fresh(len(pool), config.tau_choices, init)
    for i in range(config.iterations):
        started = time.perf_counter()
        gen = rngmod.stream(config.seed, "iteration", i)
        if config.sampler == "thompson":
            weights, tau = thompson_sample(state, gen, config.tau_sampling)
        elif config.sampler == "random":
            weights, tau = random_sample(gen, len(pool), config.tau_choices)
        else:
            weights, tau = epsilon_greedy_sample(state, state.history,
                                                 config.epsilon, gen)
        slerp_t = config.slerp_t
        if config.algorithm == "slerp":
            slerp_t = float(weights[1])  # searched weights drive the interpolant
        spec = MergeSpec(
            algorithm=config.algorithm,
            weights=tuple(float(w) for w in weights),
            tau=tau,
            ties_k=config.ties_k,
            lam=config.lam,
            dare_p=config.dare_p,
            slerp_t=slerp_t,
            collinear_eps=config.collinear_eps,
            sign_mode=config.sign_mode,
            disjoint_mode=config.disjoint_mode,
            per_tensor_trim=config.per_tensor_trim,
            seed=rngmod.child_seed(config.seed, "masks", i),
        )
        merged = apply_merge(pool, init, spec, rules, carrier=pool[0])
        try:
            score = float(evaluator(merged))
        except EvaluatorFailure as exc:
            raise EvaluatorFailure(f"iteration {i}: {exc}") from exc
        if not 0.0 <= score <= 1.0:
            raise ScoreOutOfRange(f"iteration {i}: score {score!r} outside [0, 1]")
        update(state, weights, tau, score, config.update_rule,
               params=merged, fbest_timing=config.fbest_timing)
        elapsed_ms = int((time.perf_counter() - started) * 1000)
        state.history.append(
            IterationRecord(
                iteration=i,
                weights=tuple(float(w) for w in weights),
                tau=tau.value,
                score=score,
                best=state.best_score,
                wall_ms=elapsed_ms,
            )
        )
    return SearchResult(
        best_params=state.best_params,
        best_score=state.best_score,
        history=state.history,
        state=state,
        standalone_scores=standalone,
    )


def record_to_json(record: IterationRecord, include_timing: bool = False) -> dict:
    payload = {
        "iter": record.iteration,
        "weights": list(record.weights),
        "tau": record.tau,
        "score": record.score,
        "best": record.best,
    }
    if include_timing:
        payload["ms"] = record.wall_ms
    return payload


def history_to_jsonl(history: Sequence[IterationRecord],
                     include_timing: bool = False) -> str:
    """Serialize history deterministically, one sorted-key JSON object per line.

    Wall-time is included only on request so that identical runs produce
    byte-identical reports.
    """
    import json

    lines = [
        json.dumps(record_to_json(r, include_timing), sort_keys=True,
                   separators=(",", ":"))
        for r in history
    ]
    return "\n".join(lines) + ("\n" if lines else "")


class ExternalEvaluator:
    """Scores checkpoints via `<command> <path>`; stdout must be a decimal in [0, 1]."""

    def __init__(self, command: str):
        self.argv = shlex.split(command)
        if not self.argv:
            raise ValueError("evaluator command must be nonempty")
        self._workdir: Path | None = None

    def __call__(self, candidate: TensorMap) -> float:
        if self._workdir is None:
            self._workdir = Path(tempfile.mkdtemp(prefix="guardmerge-eval-"))
        path = self._workdir / "candidate.gm"
        save_checkpoint(candidate, path)
        proc = subprocess.run(
            [*self.argv, str(path)], capture_output=True, text=True
        )
        if proc.returncode != 0:
            detail = proc.stderr.strip().splitlines()
            raise EvaluatorFailure(
                f"evaluator exited {proc.returncode}"
                + (f": {detail[-1]}" if detail else "")
            )
        text = proc.stdout.strip()
        try:
            score = float(text)
        except ValueError:
            raise EvaluatorFailure(
                f"evaluator printed {text!r}, expected a decimal in [0, 1]"
            ) from None
        if not 0.0 <= score <= 1.0:
            raise EvaluatorFailure(f"evaluator score {score!r} outside [0, 1]")
        return score

    def close(self) -> None:
        if self._workdir is not None:
            shutil.rmtree(self._workdir, ignore_errors=True)
            self._workdir = None

    def __enter__(self) -> "ExternalEvaluator":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
