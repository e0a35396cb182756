"""Synthetic-data utilities: policies, count allocation, augmentation, dedup.

The actual text generator is an external adapter process; this module
owns everything around it: the policy schema, per-kind sample-count
arithmetic, instruction formatting, label-preserving surface
augmentations, similarity-based deduplication, and prompt rendering.
"""

from __future__ import annotations

import json
import math
import shlex
import subprocess
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AdapterExit,
    CountShortfall,
    EmptyField,
    MalformedAdapterOutput,
    RatioOverflow,
)

SEP = "[SEP]"
LABELS = ("safe", "unsafe")
KINDS = ("diverse", "in_domain", "inapplicable", "jailbreak")
TRANSFORMS = ("reverse_words", "lowercase", "uppercase", "repeat_chars",
              "perturb_punct_ws")


@dataclass(frozen=True)
class Policy:
    """Guardrail policy record driving generation and instruction formatting."""

    name: str
    description: str
    allowed: tuple[str, ...] = ()
    disallowed: tuple[str, ...] = ()
    examples: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.name or not self.description:
            raise ValueError("policy name and description must be nonempty")
        object.__setattr__(self, "allowed", tuple(self.allowed))
        object.__setattr__(self, "disallowed", tuple(self.disallowed))
        overlap = set(self.allowed) & set(self.disallowed)
        if overlap:
            raise ValueError(f"behaviors both allowed and disallowed: {sorted(overlap)}")
        examples = tuple((str(p), str(l)) for p, l in self.examples)
        for _, label in examples:
            if label not in LABELS:
                raise ValueError(f"example label must be one of {LABELS}, got {label!r}")
        object.__setattr__(self, "examples", examples)


def policy_from_json(payload: dict) -> Policy:
    examples = tuple(
        (item["prompt"], item["label"]) for item in payload.get("examples", [])
    )
    return Policy(
        name=payload["name"],
        description=payload["description"],
        allowed=tuple(payload.get("allowed", [])),
        disallowed=tuple(payload.get("disallowed", [])),
        examples=examples,
    )


def load_policy(path: str | Path) -> Policy:
    return policy_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Sample:
    prompt: str
    rationale: str
    label: str
    kind: str
    policy: str

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("sample prompt must be nonempty")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")


def samples_to_jsonl(samples: Iterable[Sample]) -> str:
    lines = [
        json.dumps(
            {"kind": s.kind, "label": s.label, "policy": s.policy,
             "prompt": s.prompt, "rationale": s.rationale},
            sort_keys=True, separators=(",", ":"), ensure_ascii=True,
        )
        for s in samples
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def samples_from_jsonl(text: str) -> list[Sample]:
    samples = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
            samples.append(Sample(**payload))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ValueError(f"bad sample on line {lineno}: {exc}") from exc
    return samples


@dataclass(frozen=True)
class CountAllocation:
    """Per-kind sample counts; components always sum exactly to the total."""

    n_diverse: int
    n_in_domain: int
    n_inapplicable: int
    n_jailbreak: int

    @property
    def total(self) -> int:
        return (self.n_diverse + self.n_in_domain
                + self.n_inapplicable + self.n_jailbreak)

    def by_kind(self) -> dict[str, int]:
        return {
            "diverse": self.n_diverse,
            "in_domain": self.n_in_domain,
            "inapplicable": self.n_inapplicable,
            "jailbreak": self.n_jailbreak,
        }


def _round_half_away(x: float) -> int:
    # Half-away-from-zero; inputs here are nonnegative.
    return int(math.floor(x + 0.5))


def allocate_counts(total: int, r_diverse: float, r_in_domain: float,
                    r_inapplicable: float) -> CountAllocation:
    """Split a total into diverse / in-domain / inapplicable / jailbreak counts.

    The first three get round(ratio * total) each (half away from zero);
    the jailbreak bucket absorbs the remainder.
    """
    if total < 0:
        raise ValueError("total must be nonnegative")
    if min(r_diverse, r_in_domain, r_inapplicable) < 0:
        raise ValueError("ratios must be nonnegative")
    n_d = _round_half_away(r_diverse * total)
    n_i = _round_half_away(r_in_domain * total)
    n_p = _round_half_away(r_inapplicable * total)
    if n_d + n_i + n_p > total:
        raise RatioOverflow(
            f"rounded parts {n_d}+{n_i}+{n_p} exceed total {total}"
        )
    return CountAllocation(n_d, n_i, n_p, total - n_d - n_i - n_p)


def format_instruction(policy_desc: str, query: str, rationale: str = "") -> str:
    """Render the instruction input combining description, query, and rationale."""
    if not policy_desc or not query:
        raise EmptyField("policy description and query must be nonempty")
    text = f"Instruct: {policy_desc}{SEP}\nQuery: {query}{SEP}"
    if rationale:
        text += f" {rationale}{SEP}"
    return text


def parse_instruction(text: str) -> tuple[str, str, str]:
    """Inverse of format_instruction for inputs free of the separator token."""
    parts = text.split(SEP)
    if len(parts) < 3 or not parts[0].startswith("Instruct: "):
        raise ValueError("not an instruction input")
    desc = parts[0][len("Instruct: "):]
    if not parts[1].startswith("\nQuery: "):
        raise ValueError("missing query segment")
    query = parts[1][len("\nQuery: "):]
    rationale = ""
    if len(parts) == 4:
        rationale = parts[2][1:] if parts[2].startswith(" ") else parts[2]
    return desc, query, rationale


def augment(prompt: str, transform: str, rng: np.random.Generator,
            repeat_prob: float = 0.1, ws_prob: float = 0.15) -> str:
    """Label-preserving surface transformation of a prompt."""
    if not prompt:
        raise ValueError("prompt must be nonempty")
    if transform == "reverse_words":
        return " ".join(reversed(prompt.split()))
    if transform == "lowercase":
        return prompt.lower()
    if transform == "uppercase":
        return prompt.upper()
    if transform == "repeat_chars":
        out = []
        for ch in prompt:
            out.append(ch)
            if rng.random() < repeat_prob:
                out.append(ch)
        return "".join(out)
    if transform == "perturb_punct_ws":
        out = []
        for ch in prompt:
            if ch == " ":
                roll = rng.random()
                if roll < ws_prob:
                    continue  # delete this space
                if roll < 2 * ws_prob:
                    out.append("  ")
                    continue
            out.append(ch)
        text = "".join(out)
        if text and text[-1] in ".!?" and rng.random() < 0.5:
            text += text[-1]
        return text
    raise ValueError(f"unknown transform {transform!r}; expected one of {TRANSFORMS}")


def apply_augmentation_plan(samples: Sequence[Sample],
                            per_transform_probs: dict[str, float],
                            rng: np.random.Generator) -> list[Sample]:
    """Apply each transform to each sample independently with its probability."""
    for transform, prob in per_transform_probs.items():
        if transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {transform!r}")
        if not 0.0 <= prob <= 1.0:
            raise ValueError("transform probabilities must be in [0, 1]")
    out = []
    for sample in samples:
        prompt = sample.prompt
        for transform in TRANSFORMS:
            prob = per_transform_probs.get(transform, 0.0)
            if prob > 0 and rng.random() < prob:
                prompt = augment(prompt, transform, rng)
        out.append(replace(sample, prompt=prompt) if prompt != sample.prompt
                   else sample)
    return out


def jaccard_tokens(a: str, b: str) -> float:
    """Jaccard similarity over lowercased whitespace tokens."""
    ta = set(a.lower().split())
    tb = set(b.lower().split())
    if not ta and not tb:
        return 1.0
    return len(ta & tb) / len(ta | tb)


class _SimilarityAdapter:
    """Line-protocol subprocess: {"a":..., "b":...} in, {"similarity": x} out."""

    def __init__(self, command: str):
        self.proc = subprocess.Popen(
            shlex.split(command), stdin=subprocess.PIPE,
            stdout=subprocess.PIPE, text=True,
        )
        self._lineno = 0

    def similarity(self, a: str, b: str) -> float:
        assert self.proc.stdin and self.proc.stdout
        self.proc.stdin.write(json.dumps({"a": a, "b": b}) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        self._lineno += 1
        if not line:
            code = self.proc.wait()
            raise AdapterExit(f"similarity adapter closed its output (exit {code})")
        try:
            value = float(json.loads(line)["similarity"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedAdapterOutput(
                f"similarity adapter line {self._lineno}: {exc}"
            ) from exc
        return value

    def close(self) -> None:
        if self.proc.stdin:
            self.proc.stdin.close()
        code = self.proc.wait()
        if code != 0:
            raise AdapterExit(f"similarity adapter exited {code}")


def dedup(samples: Sequence[Sample], similarity: str = "jaccard_tokens",
          threshold: float = 0.9, adapter_command: str | None = None,
          ) -> list[Sample]:
    """Greedy scan in input order, dropping samples >= threshold similar to a kept one."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    if similarity == "jaccard_tokens":
        measure = jaccard_tokens
        adapter = None
    elif similarity == "external":
        if not adapter_command:
            raise ValueError("external similarity requires an adapter command")
        adapter = _SimilarityAdapter(adapter_command)
        measure = adapter.similarity
    else:
        raise ValueError(f"unknown similarity {similarity!r}")
    kept: list[Sample] = []
    try:
        for sample in samples:
            if all(measure(sample.prompt, k.prompt) < threshold for k in kept):
                kept.append(sample)
    finally:
        if adapter is not None:
            adapter.close()
    return kept


_KIND_FRAMING = {
    "diverse": ("Vary tone, length, phrasing, and topic across the prompts "
                "while keeping every prompt consistent with the target label."),
    "in_domain": ("Stay strictly within the policy's domain: condition each "
                  "prompt on the behaviors listed above and on closely "
                  "related subtopics."),
    "inapplicable": ("Write prompts to which this policy simply does not "
                     "apply; they should be off-topic for the behaviors "
                     "above."),
    "jailbreak": ("Frame each prompt as a jailbreak attempt: role-play "
                  "setups, instruction overrides, obfuscated wording, or "
                  "other adversarial re-phrasings consistent with the "
                  "target label."),
}


def render_generation_prompt(policy: Policy, kind: str, target_label: str,
                             count: int) -> str:
    """Deterministic generation prompt embedding the full policy."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if target_label not in LABELS:
        raise ValueError(f"target_label must be one of {LABELS}")
    if count < 1:
        raise ValueError("count must be at least 1")
    lines = [
        f"Generate {count} {target_label} prompts for the guardrail policy below.",
        "",
        f"Policy name: {policy.name}",
        f"Policy description: {policy.description}",
    ]
    if policy.allowed:
        lines.append("Allowed behaviors:")
        lines.extend(f"- {behavior}" for behavior in policy.allowed)
    if policy.disallowed:
        lines.append("Disallowed behaviors:")
        lines.extend(f"- {behavior}" for behavior in policy.disallowed)
    if policy.examples:
        lines.append("Labeled examples:")
        lines.extend(f"- [{label}] {prompt}" for prompt, label in policy.examples)
    lines.extend([
        "",
        _KIND_FRAMING[kind],
        "",
        (f"Return exactly {count} JSON lines, each of the form "
         '{"prompt": "...", "rationale": "..."} with a rationale for the '
         f"{target_label} label."),
    ])
    return "\n".join(lines)


def render_refinement_prompt(policy: Policy, samples: Sequence[Sample]) -> str:
    """Prompt asking the generator to re-judge its own labels for clarity."""
    lines = [
        "Re-examine the labels you previously assigned under this policy and "
        "correct any you now judge wrong.",
        "",
        f"Policy name: {policy.name}",
        f"Policy description: {policy.description}",
        "",
        "Samples:",
    ]
    lines.extend(
        f"{i}. [{s.label}] {s.prompt}" for i, s in enumerate(samples, start=1)
    )
    lines.extend([
        "",
        ('Return one JSON line per sample, in order, of the form '
         '{"index": n, "label": "safe"|"unsafe"}.'),
    ])
    return "\n".join(lines)


def generate_via_adapter(policy: Policy, allocation: CountAllocation,
                         adapter_command: str, label: str = "safe",
                         ) -> list[Sample]:
    """Request one kind/label bucket at a time from the generator adapter.

    Protocol: one JSON request line
    {"prompt": <rendered>, "count": n, "label": ..., "kind": ...} on the
    adapter's stdin; the adapter answers with exactly n JSON lines
    {"prompt": ..., "rationale": ...}.
    """
    if label not in LABELS:
        raise ValueError(f"label must be one of {LABELS}")
    proc = subprocess.Popen(
        shlex.split(adapter_command), stdin=subprocess.PIPE,
        stdout=subprocess.PIPE, text=True,
    )
    assert proc.stdin and proc.stdout
    samples: list[Sample] = []
    lineno = 0
    try:
        for kind, count in allocation.by_kind().items():
            if count == 0:
                continue
            request = {
                "prompt": render_generation_prompt(policy, kind, label, count),
                "count": count,
                "label": label,
                "kind": kind,
            }
            proc.stdin.write(json.dumps(request) + "\n")
            proc.stdin.flush()
            for _ in range(count):
                line = proc.stdout.readline()
                lineno += 1
                if not line:
                    code = proc.wait()
                    if code != 0:
                        raise AdapterExit(f"adapter exited {code} mid-bucket")
                    raise CountShortfall(
                        f"adapter returned {lineno} lines, bucket {kind!r} "
                        f"needed more"
                    )
                try:
                    payload = json.loads(line)
                    prompt = payload["prompt"]
                    rationale = payload.get("rationale", "")
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise MalformedAdapterOutput(
                        f"adapter line {lineno}: {exc}"
                    ) from exc
                if not isinstance(prompt, str) or not prompt:
                    raise MalformedAdapterOutput(
                        f"adapter line {lineno}: empty or non-string prompt"
                    )
                samples.append(Sample(prompt=prompt, rationale=str(rationale),
                                      label=label, kind=kind,
                                      policy=policy.name))
    finally:
        proc.stdin.close()
        code = proc.wait()
    if code != 0:
        raise AdapterExit(f"adapter exited {code}")
    return samples
