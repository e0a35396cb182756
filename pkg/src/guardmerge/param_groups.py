"""Tensor-name grouping and merge-type parameter selection.

A merge type picks which parameter subset participates in a merge:
everything, attention blocks only, feed-forward blocks only, or the
whole network minus the classification head.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .errors import EmptySelection

GROUP_LABELS = ("attention", "ffn", "embedding", "classifier", "other")

_GLOB_CHARS = set("*?[")


class MergeType(str, Enum):
    FULL = "full"
    ATTENTION = "attention"
    FFN = "ffn"
    BASE = "base"

    @classmethod
    def parse(cls, value: "MergeType | str") -> "MergeType":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ValueError(
                f"unknown merge type {value!r}; expected one of "
                f"{[t.value for t in cls]}"
            ) from None


@dataclass(frozen=True)
class GroupRules:
    """Ordered (label, pattern) rules; first match wins, default label 'other'.

    A pattern containing glob metacharacters is matched as an anchored
    glob against the full name; otherwise it is a substring test.
    """

    patterns: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.patterns:
            raise ValueError("GroupRules requires at least one pattern")
        for label, pattern in self.patterns:
            if label not in GROUP_LABELS:
                raise ValueError(f"unknown group label {label!r}")
            if not pattern:
                raise ValueError("patterns must be nonempty")


DEFAULT_RULES = GroupRules(
    patterns=(
        ("attention", "attention"),
        ("attention", "attn"),
        ("ffn", "intermediate"),
        ("ffn", "ffn"),
        ("ffn", "mlp"),
        ("embedding", "embed"),
        ("classifier", "classifier"),
        ("classifier", "score"),
        ("classifier", "head"),
    )
)


def _matches(name: str, pattern: str) -> bool:
    if _GLOB_CHARS & set(pattern):
        return fnmatch.fnmatchcase(name, pattern)
    return pattern in name


def classify(name: str, rules: GroupRules = DEFAULT_RULES) -> str:
    """Label a tensor name with the first matching rule, else 'other'."""
    for label, pattern in rules.patterns:
        if _matches(name, pattern):
            return label
    return "other"


def select_params(names: Iterable[str], tau: MergeType | str,
                  rules: GroupRules = DEFAULT_RULES) -> set[str]:
    """Resolve a merge type into the set of tensor names to merge."""
    tau = MergeType.parse(tau)
    all_names = set(names)
    if not all_names:
        raise ValueError("select_params requires a nonempty name set")
    if tau is MergeType.FULL:
        selected = all_names
    elif tau is MergeType.ATTENTION:
        selected = {n for n in all_names if classify(n, rules) == "attention"}
    elif tau is MergeType.FFN:
        selected = {n for n in all_names if classify(n, rules) == "ffn"}
    else:  # BASE: everything except the classification layer
        selected = {n for n in all_names if classify(n, rules) != "classifier"}
    if not selected:
        raise EmptySelection(f"merge type {tau.value!r} selects no tensors")
    return selected
