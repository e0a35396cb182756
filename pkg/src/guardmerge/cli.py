"""Command-line interface: merge, search, eval, sdg, convert, inspect.

Exit codes: 0 success, 1 usage error, 2 data error, 3 evaluator or
adapter failure. Diagnostics go to stderr; machine output (scores,
reports, checkpoints) goes to stdout or to --out/--report paths.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from . import rng as rngmod
from .config import load_config, rules_from_config
from .errors import ConfigError, DataError, RuntimeFailure
from .merge_algos import ALGORITHMS, DISJOINT_MODES, SIGN_MODES, MergeSpec, apply_merge
from .merge_search import (
    ExternalEvaluator,
    SAMPLERS,
    SearchConfig,
    UPDATE_RULES,
    history_to_jsonl,
    run_search,
)
from .param_groups import MergeType, classify
from .sdg import (
    TRANSFORMS,
    allocate_counts,
    dedup,
    apply_augmentation_plan,
    generate_via_adapter,
    load_policy,
    samples_from_jsonl,
    samples_to_jsonl,
)
from .tensor_store import (
    MAGIC,
    TensorMap,
    file_checksum,
    from_json_dump,
    load_checkpoint,
    save_checkpoint,
    to_json_dump,
)
from .toy_eval import (
    TaskSpec,
    classifier_evaluator,
    make_synthetic_task,
)


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_weights(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError:
        raise ConfigError(f"bad weights {text!r}; expected comma-separated floats")


def _uniform(n: int) -> tuple[float, ...]:
    return tuple(1.0 / n for _ in range(n))


def _pick(flag_value, config_value):
    return config_value if flag_value is None else flag_value


def _load_models(paths, allow_nonfinite: bool) -> list[TensorMap]:
    return [load_checkpoint(p, allow_nonfinite) for p in paths]


def _merge_spec_from_args(args, config, n_models: int) -> MergeSpec:
    section = config["merge"]
    weights = (_parse_weights(args.weights) if args.weights is not None
               else _uniform(n_models))
    try:
        return MergeSpec(
            algorithm=_pick(args.algo, section["algorithm"]),
            weights=weights,
            tau=_pick(args.tau, section["tau"]),
            ties_k=_pick(args.k, section["k"]),
            lam=_pick(getattr(args, "lambda"), section["lambda"]),
            dare_p=_pick(args.p, section["p"]),
            slerp_t=_pick(args.t, section["t"]),
            collinear_eps=_pick(args.collinear_eps, section["collinear_eps"]),
            sign_mode=_pick(args.sign_mode, section["sign_mode"]),
            disjoint_mode=_pick(args.disjoint_mode, section["disjoint_mode"]),
            per_tensor_trim=section["per_tensor_trim"],
            seed=_pick(args.seed, section["seed"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_evaluator(spec: str, config: dict):
    """Evaluator factory for `toy:<json-spec>` and `exec:<command>` strings."""
    if spec.startswith("toy:"):
        try:
            payload = json.loads(spec[len("toy:"):]) if spec[len("toy:"):] else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad toy evaluator spec: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError("toy evaluator spec must be a JSON object")
        section = dict(config["toy"])
        for key in payload:
            if key not in section:
                raise ConfigError(f"unknown toy spec key {key!r}")
        section.update(payload)
        task_spec = TaskSpec(
            dim=section["dim"],
            n_train_per_slice=section["n_train_per_slice"],
            n_slices=section["n_slices"],
            n_val=section["n_val"],
            cluster_separation=section["cluster_separation"],
        )
        _, validation = make_synthetic_task(section["seed"], task_spec)
        return classifier_evaluator(validation), None
    if spec.startswith("exec:"):
        evaluator = ExternalEvaluator(spec[len("exec:"):])
        return evaluator, evaluator
    raise ConfigError(f"evaluator must start with 'toy:' or 'exec:', got {spec!r}")


def _cmd_merge(args) -> int:
    config = load_config(args.config)
    rules = rules_from_config(config)
    models = _load_models(args.models, args.allow_nonfinite)
    spec = _merge_spec_from_args(args, config, len(models))
    init = (load_checkpoint(args.init, args.allow_nonfinite)
            if args.init else None)
    carrier_index = _pick(args.carrier, config["merge"]["carrier"])
    if not 0 <= carrier_index < len(models):
        raise ConfigError(f"carrier index {carrier_index} out of range")
    try:
        merged = apply_merge(models, init, spec, rules,
                             carrier=models[carrier_index])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    save_checkpoint(merged, args.out)
    return 0


def _cmd_search(args) -> int:
    config = load_config(args.config)
    rules = rules_from_config(config)
    section = config["search"]
    merge_section = config["merge"]
    models = _load_models(args.models, args.allow_nonfinite)
    init = load_checkpoint(args.init, args.allow_nonfinite)
    tau_choices = (_pick(args.tau_choices, ",".join(section["tau_choices"]))
                   .split(","))
    try:
        search_config = SearchConfig(
            sampler=_pick(args.sampler, section["sampler"]),
            update_rule=_pick(args.update_rule, section["update_rule"]),
            iterations=_pick(args.iterations, section["iterations"]),
            top_k_models=_pick(args.top_k, section["top_k"]),
            epsilon=_pick(args.epsilon, section["epsilon"]),
            algorithm=_pick(args.algo, merge_section["algorithm"]),
            tau_choices=tuple(tau_choices),
            tau_sampling=section["tau_sampling"],
            fbest_timing=section["fbest_timing"],
            ties_k=_pick(args.k, merge_section["k"]),
            lam=_pick(getattr(args, "lambda"), merge_section["lambda"]),
            dare_p=_pick(args.p, merge_section["p"]),
            slerp_t=_pick(args.t, merge_section["t"]),
            collinear_eps=merge_section["collinear_eps"],
            sign_mode=merge_section["sign_mode"],
            disjoint_mode=merge_section["disjoint_mode"],
            per_tensor_trim=merge_section["per_tensor_trim"],
            seed=_pick(args.seed, section["seed"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    evaluator, closer = _build_evaluator(args.evaluator, config)
    try:
        try:
            result = run_search(models, init, evaluator, search_config, rules)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    finally:
        if closer is not None:
            closer.close()
    if args.report:
        Path(args.report).write_text(
            history_to_jsonl(result.history, include_timing=args.timing),
            encoding="utf-8",
        )
    if args.out:
        save_checkpoint(result.best_params, args.out)
    print(result.best_score)
    return 0


def _cmd_eval(args) -> int:
    config = load_config(args.config)
    model = load_checkpoint(args.model, args.allow_nonfinite)
    evaluator, closer = _build_evaluator(args.task, config)
    try:
        score = evaluator(model)
    finally:
        if closer is not None:
            closer.close()
    print(score)
    return 0


def _cmd_convert(args) -> int:
    raw = Path(args.input).read_bytes()
    if raw[: len(MAGIC)] == MAGIC:
        tmap = load_checkpoint(args.input, args.allow_nonfinite)
        Path(args.output).write_text(to_json_dump(tmap), encoding="utf-8")
    else:
        tmap = from_json_dump(raw.decode("utf-8"))
        save_checkpoint(tmap, args.output)
    return 0


def _cmd_inspect(args) -> int:
    config = load_config(args.config)
    rules = rules_from_config(config)
    tmap = load_checkpoint(args.path, args.allow_nonfinite)
    checksum = file_checksum(args.path)
    tensors = [
        {
            "name": name,
            "shape": list(arr.shape),
            "group": classify(name, rules),
            "elements": int(arr.size),
        }
        for name, arr in tmap.items()
    ]
    if args.json:
        print(json.dumps(
            {
                "checksum": checksum,
                "format": MAGIC.decode("ascii"),
                "metadata": tmap.metadata,
                "parameters": tmap.total_elements(),
                "tensors": tensors,
            },
            sort_keys=True, separators=(",", ":"),
        ))
        return 0
    print(f"checkpoint: {args.path}")
    print(f"format: {MAGIC.decode('ascii')}")
    print(f"tensors: {len(tensors)}")
    print(f"parameters: {tmap.total_elements()}")
    print(f"checksum: {checksum}")
    for key, value in sorted(tmap.metadata.items()):
        print(f"metadata.{key}: {value}")
    for entry in tensors:
        print(f"  {entry['name']}  shape={entry['shape']}  group={entry['group']}")
    return 0


def _parse_probs(text: str) -> dict[str, float]:
    probs = {}
    for part in text.split(","):
        if not part:
            continue
        name, _, value = part.partition("=")
        if name not in TRANSFORMS:
            raise ConfigError(f"unknown transform {name!r}")
        try:
            probs[name] = float(value)
        except ValueError:
            raise ConfigError(f"bad probability for {name!r}: {value!r}")
    return probs


def _cmd_sdg_allocate(args) -> int:
    allocation = allocate_counts(args.total, args.rd, args.ri, args.rp)
    print(json.dumps(
        {
            "diverse": allocation.n_diverse,
            "in_domain": allocation.n_in_domain,
            "inapplicable": allocation.n_inapplicable,
            "jailbreak": allocation.n_jailbreak,
            "total": allocation.total,
        },
        sort_keys=True, separators=(",", ":"),
    ))
    return 0


def _cmd_sdg_augment(args) -> int:
    samples = samples_from_jsonl(Path(args.input).read_text(encoding="utf-8"))
    probs = _parse_probs(args.probs)
    gen = rngmod.stream(args.seed, "augment")
    augmented = apply_augmentation_plan(samples, probs, gen)
    Path(args.output).write_text(samples_to_jsonl(augmented), encoding="utf-8")
    return 0


def _cmd_sdg_generate(args) -> int:
    policy = load_policy(args.policy)
    allocation = allocate_counts(args.total, args.rd, args.ri, args.rp)
    samples = generate_via_adapter(policy, allocation, args.adapter,
                                   label=args.label)
    text = samples_to_jsonl(samples)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_sdg_dedup(args) -> int:
    config = load_config(args.config)
    samples = samples_from_jsonl(Path(args.input).read_text(encoding="utf-8"))
    threshold = _pick(args.threshold, config["sdg"]["dedup_threshold"])
    kept = dedup(samples, similarity=args.similarity, threshold=threshold,
                 adapter_command=args.adapter)
    Path(args.output).write_text(samples_to_jsonl(kept), encoding="utf-8")
    return 0


def _add_merge_flags(parser) -> None:
    parser.add_argument("--algo", choices=ALGORITHMS, default=None)
    parser.add_argument("--k", type=float, default=None,
                        help="trim percentile in (0, 100]")
    parser.add_argument("--lambda", type=float, default=None, dest="lambda",
                        help="scale on the merged task vector")
    parser.add_argument("--p", type=float, default=None, help="drop rate in [0, 1)")
    parser.add_argument("--t", type=float, default=None,
                        help="spherical interpolation parameter in [0, 1]")
    parser.add_argument("--seed", type=int, default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="guardmerge")
    parser.add_argument(
        "--version", action="version",
        version=f"guardmerge {__version__} (checkpoint format {MAGIC.decode('ascii')})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    merge = sub.add_parser("merge", help="merge checkpoints with one operator")
    merge.add_argument("--models", nargs="+", required=True)
    merge.add_argument("--tau", choices=[t.value for t in MergeType],
                       default=None)
    merge.add_argument("--init", default=None)
    merge.add_argument("--weights", default=None,
                       help="comma-separated, summing to 1; default uniform")
    merge.add_argument("--out", required=True)
    merge.add_argument("--carrier", type=int, default=None,
                       help="index of the model providing unmerged tensors")
    merge.add_argument("--sign-mode", choices=SIGN_MODES, default=None)
    merge.add_argument("--disjoint-mode", choices=DISJOINT_MODES, default=None)
    merge.add_argument("--collinear-eps", type=float, default=None)
    merge.add_argument("--config", default=None)
    merge.add_argument("--allow-nonfinite", action="store_true")
    _add_merge_flags(merge)
    merge.set_defaults(func=_cmd_merge)

    search = sub.add_parser("search", help="bandit search over merge weights and type")
    search.add_argument("--models", nargs="+", required=True)
    search.add_argument("--init", required=True)
    search.add_argument("--evaluator", required=True,
                        help="toy:<json-spec> or exec:<command>")
    search.add_argument("--sampler", choices=SAMPLERS, default=None)
    search.add_argument("--update-rule", choices=UPDATE_RULES, default=None)
    search.add_argument("--iterations", type=int, default=None)
    search.add_argument("--top-k", type=int, default=None)
    search.add_argument("--epsilon", type=float, default=None)
    search.add_argument("--tau-choices", default=None,
                        help="comma-separated subset of full,attention,ffn,base")
    search.add_argument("--report", default=None, help="JSONL history path")
    search.add_argument("--out", default=None, help="best merged checkpoint path")
    search.add_argument("--timing", action="store_true",
                        help="include wall-time ms in the report (non-reproducible)")
    search.add_argument("--config", default=None)
    search.add_argument("--allow-nonfinite", action="store_true")
    _add_merge_flags(search)
    search.set_defaults(func=_cmd_search)

    evaluate = sub.add_parser("eval", help="score one checkpoint on a task")
    evaluate.add_argument("--model", required=True)
    evaluate.add_argument("--task", required=True, help="toy:<json-spec> or exec:<command>")
    evaluate.add_argument("--config", default=None)
    evaluate.add_argument("--allow-nonfinite", action="store_true")
    evaluate.set_defaults(func=_cmd_eval)

    convert = sub.add_parser(
        "convert", help="convert between the binary container and a JSON tensor dump"
    )
    convert.add_argument("input")
    convert.add_argument("output")
    convert.add_argument("--allow-nonfinite", action="store_true")
    convert.set_defaults(func=_cmd_convert)

    inspect = sub.add_parser("inspect", help="summarize a checkpoint")
    inspect.add_argument("path")
    inspect.add_argument("--json", action="store_true")
    inspect.add_argument("--config", default=None)
    inspect.add_argument("--allow-nonfinite", action="store_true")
    inspect.set_defaults(func=_cmd_inspect)

    sdg = sub.add_parser("sdg", help="synthetic-data utilities")
    sdg_sub = sdg.add_subparsers(dest="sdg_command", required=True)

    allocate = sdg_sub.add_parser("allocate", help="split a total into per-kind counts")
    allocate.add_argument("--total", type=int, required=True)
    allocate.add_argument("--rd", type=float, required=True, help="diverse ratio")
    allocate.add_argument("--ri", type=float, required=True, help="in-domain ratio")
    allocate.add_argument("--rp", type=float, required=True, help="inapplicable ratio")
    allocate.set_defaults(func=_cmd_sdg_allocate)

    augment = sdg_sub.add_parser("augment", help="apply surface transforms to samples")
    augment.add_argument("--in", dest="input", required=True)
    augment.add_argument("--out", dest="output", required=True)
    augment.add_argument("--probs", required=True,
                         help="e.g. lowercase=0.5,reverse_words=0.2")
    augment.add_argument("--seed", type=int, default=0)
    augment.set_defaults(func=_cmd_sdg_augment)

    generate = sdg_sub.add_parser("generate", help="generate samples via an adapter")
    generate.add_argument("--policy", required=True)
    generate.add_argument("--adapter", required=True)
    generate.add_argument("--total", type=int, required=True)
    generate.add_argument("--rd", type=float, required=True)
    generate.add_argument("--ri", type=float, required=True)
    generate.add_argument("--rp", type=float, required=True)
    generate.add_argument("--label", choices=("safe", "unsafe"), default="safe")
    generate.add_argument("--out", default=None)
    generate.set_defaults(func=_cmd_sdg_generate)

    dedup_cmd = sdg_sub.add_parser("dedup", help="drop near-duplicate samples")
    dedup_cmd.add_argument("--in", dest="input", required=True)
    dedup_cmd.add_argument("--out", dest="output", required=True)
    dedup_cmd.add_argument("--threshold", type=float, default=None)
    dedup_cmd.add_argument("--similarity",
                           choices=("jaccard_tokens", "external"),
                           default="jaccard_tokens")
    dedup_cmd.add_argument("--adapter", default=None)
    dedup_cmd.add_argument("--config", default=None)
    dedup_cmd.set_defaults(func=_cmd_sdg_dedup)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"guardmerge: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError, ValueError) as exc:
        print(f"guardmerge: data error: {exc}", file=sys.stderr)
        return 2
    except RuntimeFailure as exc:
        print(f"guardmerge: evaluator/adapter failure: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))
