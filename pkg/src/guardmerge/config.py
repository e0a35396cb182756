"""JSON configuration shared by every CLI subcommand.

A config file supplies defaults; explicit flags override file values.
Unknown keys are rejected so typos fail loudly instead of silently
falling back to defaults.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError
from .param_groups import DEFAULT_RULES, GroupRules

DEFAULTS: dict = {
    "merge": {
        "algorithm": "ties",
        "tau": "full",
        "k": 20.0,
        "lambda": 1.0,
        "p": 0.9,
        "t": 0.5,
        "collinear_eps": 1e-5,
        "sign_mode": "weighted",
        "disjoint_mode": "weighted_mean",
        "per_tensor_trim": False,
        "carrier": 0,
        "seed": 0,
    },
    "search": {
        "sampler": "thompson",
        "update_rule": "algorithm1",
        "iterations": 50,
        "top_k": 6,
        "epsilon": 0.1,
        "tau_sampling": "argmax",
        "fbest_timing": "pre",
        "tau_choices": ["full", "attention", "ffn", "base"],
        "seed": 0,
    },
    "groups": {
        "patterns": [list(item) for item in DEFAULT_RULES.patterns],
    },
    "toy": {
        "dim": 2,
        "n_train_per_slice": 200,
        "n_slices": 2,
        "n_val": 200,
        "cluster_separation": 3.0,
        "epochs": 200,
        "learning_rate": 0.5,
        "seed": 0,
    },
    "sdg": {
        "repeat_prob": 0.1,
        "ws_prob": 0.15,
        "dedup_threshold": 0.9,
    },
}


def _check_keys(payload: dict, reference: dict, path: str) -> None:
    for key, value in payload.items():
        if key not in reference:
            raise ConfigError(f"unknown config key {path}{key!r}")
        if isinstance(reference[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path}{key!r} must be an object")
            _check_keys(value, reference[key], f"{path}{key}.")


def _deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: str | Path | None) -> dict:
    """Defaults deep-merged with the given JSON file (if any)."""
    if path is None:
        return json.loads(json.dumps(DEFAULTS))
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(payload, DEFAULTS, "")
    return _deep_merge(json.loads(json.dumps(DEFAULTS)), payload)


def rules_from_config(config: dict) -> GroupRules:
    patterns = config["groups"]["patterns"]
    try:
        return GroupRules(patterns=tuple((label, pattern)
                                         for label, pattern in patterns))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad groups.patterns: {exc}") from exc
