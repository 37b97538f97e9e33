"""``mmbt`` command line: run, validate, oracle, trace.

Exit codes: 0 success, 2 configuration or DSL error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from mmbt import dsl
from mmbt.config import ConfigError, RunConfig, TreeError, load_config, shipped_config_path
from mmbt.fusion import FusionError, FusionPolicy, ModalityAccuracy, fused_accuracy
from mmbt.harness import run_trials, trace_lines, write_jsonl
from mmbt.labsim import GUARD_CONDITIONS

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class UsageError(Exception):
    pass


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return value == "on"


def _floats(value: str) -> list[float]:
    try:
        return [float(x) for x in value.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}") from None


def _load(args) -> RunConfig:
    if args.config:
        config = load_config(args.config)
        if getattr(args, "task", None) and args.task != config.task:
            raise ConfigError(f"--task {args.task} does not match config task {config.task}")
    elif getattr(args, "task", None):
        config = load_config(shipped_config_path(args.task))
    else:
        raise UsageError("give --config or --task")
    return config.with_overrides(
        trials=getattr(args, "trials", None),
        seed=getattr(args, "seed", None),
        faults=getattr(args, "faults", None),
    )


def cmd_run(args) -> int:
    config = _load(args)
    if args.alternate is not None:
        config.setup.faults.alternate_classes = args.alternate
    if args.trace:
        records = []
        for t in range(config.trials):
            lines, _ = trace_lines(config, t)
            records.extend(lines)
        with open(args.trace, "w", encoding="utf-8", newline="\n") as fh:
            write_jsonl(records, fh)
    summary, _ = run_trials(config, workers=args.workers)
    body = summary.to_json()
    if args.out:
        Path(args.out).write_text(body, encoding="utf-8", newline="\n")
        lo, hi = summary.wilson_95
        print(
            f"{config.task}: {summary.trials} trials, success {summary.success_rate:.4f}"
            f" (95% CI {lo:.4f}-{hi:.4f}), mean duration {summary.mean_duration_s:.2f} s"
        )
        print(f"outcomes: {json.dumps(summary.outcome_histogram, sort_keys=True)}")
    else:
        sys.stdout.write(body)
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        tree = dsl.parse_file(args.tree)
    except OSError as exc:
        print(f"{args.tree}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except dsl.ParseError as exc:
        for d in exc.diagnostics:
            print(d.format(args.tree))
        return EXIT_CONFIG
    modalities = load_config(args.config).condition_modalities() if args.config else None
    diags = dsl.validate(tree, GUARD_CONDITIONS, modalities)
    for d in diags:
        print(d.format(args.tree))
    print(f"{args.tree}: ok ({len(diags)} warning{'s' if len(diags) != 1 else ''})")
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.accuracies is not None:
        accs = args.accuracies
        weights = args.weights if args.weights is not None else [1.0 / len(accs)] * len(accs)
        names = [f"m{i + 1}" for i in range(len(accs))]
        policy = FusionPolicy(tuple(names), tuple(weights), args.threshold)
        accuracies = [ModalityAccuracy.symmetric(n, a) for n, a in zip(names, accs)]
        strict = False
        condition = "adhoc"
    else:
        if not args.condition:
            raise UsageError("oracle needs --condition (with --config/--task) or --accuracies")
        config = _load(args)
        policy = config.policy(args.condition)
        accuracies = config.accuracies(args.condition)
        strict = config.setup.strict_eq1
        condition = args.condition
    result = fused_accuracy(policy, accuracies, args.prior, strict)
    out = {
        "condition": condition,
        "modalities": list(policy.modalities),
        "weights": list(policy.weights),
        "lambda": policy.threshold,
        "prior_success": args.prior,
        "sensitivity": result.sensitivity,
        "specificity": result.specificity,
        "accuracy": result.accuracy,
    }
    sys.stdout.write(json.dumps(out, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def cmd_trace(args) -> int:
    config = _load(args)
    lines, _ = trace_lines(config, args.trial)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            write_jsonl(lines, fh)
    else:
        write_jsonl(lines, sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmbt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run seeded Monte Carlo trials")
    run.add_argument("--task", choices=("capping", "insertion"))
    run.add_argument("--config")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--faults", type=_on_off, metavar="on|off")
    run.add_argument("--alternate", type=_on_off, metavar="on|off",
                     help="force alternating ground-truth classes (needs --faults on)")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--out", help="write the JSON report here")
    run.add_argument("--trace", help="write JSONL tick and vote records for every trial")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="parse and lint a .bt file")
    val.add_argument("--tree", required=True)
    val.add_argument("--config", help="also check condition modalities against this config")
    val.set_defaults(func=cmd_validate)

    orc = sub.add_parser("oracle", help="exact fused accuracy of a condition")
    orc.add_argument("--task", choices=("capping", "insertion"))
    orc.add_argument("--config")
    orc.add_argument("--condition")
    orc.add_argument("--prior", type=float, default=0.5)
    orc.add_argument("--accuracies", type=_floats, help="ad hoc symmetric accuracies, e.g. 0.94,0.90")
    orc.add_argument("--weights", type=_floats, help="weights for --accuracies (default equal)")
    orc.add_argument("--lambda", dest="threshold", type=float, default=0.5)
    orc.set_defaults(func=cmd_oracle)

    tr = sub.add_parser("trace", help="trace one trial as JSONL")
    tr.add_argument("--task", choices=("capping", "insertion"))
    tr.add_argument("--config")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--trial", type=int, default=0)
    tr.add_argument("--faults", type=_on_off, metavar="on|off")
    tr.add_argument("--out")
    tr.set_defaults(func=cmd_trace)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        # downstream closed early (e.g. piped into head)
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK
    except TreeError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, FusionError, UsageError) as exc:
        print(f"mmbt: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report and exit non-zero
        print(f"mmbt: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
