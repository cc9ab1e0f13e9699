"""Command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 runtime failure (a JSON failure
record is written to ``<output_dir>/failure.json`` and echoed on stderr).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..core import ValidationError
from ..deep import evaluate
from .checkpoints import load_policy
from .config import ExperimentConfig, load
from .distributions import generate_distribution_set
from .experiments import (
    RunFailure,
    ablation_buffer_sizes,
    adhoc_scenario,
    export_density,
    run_experiment,
    seed_dir_name,
    sweep,
    theorem1_suite,
)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
THEOREM1_TOL = 1e-10


class CheckFailed(RuntimeError):
    pass


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"expected a comma-separated list of integers, got {text!r}") from None


def resolve_config(args) -> ExperimentConfig:
    config = load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ValidationError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if overrides:
        config = config.with_overrides(overrides)
    if args.seed:
        config = replace(config, seeds=tuple(args.seed))
    if args.output_dir:
        config = replace(config, output_dir=args.output_dir)
    config.validate()
    args.output_dir = config.output_dir  # failure records land next to the runs
    return config


def _dist_set(config: ExperimentConfig, which: str, model) -> list:
    spec = config.train_distributions if which == "train" else config.test_distributions
    if spec is None:
        raise ValidationError(f"config has no {which} distribution set")
    return generate_distribution_set(spec, model.states)


def _pick(dists: list, index: int, what: str):
    if not 0 <= index < len(dists):
        raise ValidationError(f"{what} index {index} outside [0, {len(dists)})")
    return dists[index]


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    config = resolve_config(args)
    result = run_experiment(config)
    _emit({
        "run_dir": str(result.root),
        "summary": str(result.summary),
        "final_exploitability": {seed_dir_name(k): v for k, v in result.final.items()},
        "test_exploitability": {seed_dir_name(k): float(np.mean(v)) for k, v in result.test_exploitability.items()},
    })
    return EXIT_OK


def cmd_eval(args) -> int:
    config = resolve_config(args)
    model = config.model()
    policy, _ = load_policy(args.checkpoint, model, args.policy_index)
    dists = _dist_set(config, args.dists, model)
    values = evaluate(policy, dists, model)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("distribution", "exploitability"))
            w.writerows((i, repr(v)) for i, v in enumerate(values))
    _emit({"distributions": args.dists, "exploitability": values, "mean": float(np.mean(values))})
    return EXIT_OK


def cmd_export_density(args) -> int:
    config = resolve_config(args)
    model = config.model()
    policy, _ = load_policy(args.checkpoint, model, args.policy_index)
    mu0 = _pick(_dist_set(config, args.dists, model), args.dist_index, "distribution")
    steps = _ints(args.timesteps) if args.timesteps else list(range(model.horizon + 1))
    tables = export_density(policy, mu0, model, steps, args.out)
    _emit({"out": args.out, "timesteps": sorted(tables), "mass": {str(n): sum(r[-1] for r in t) for n, t in tables.items()}})
    return EXIT_OK


def cmd_adhoc(args) -> int:
    config = resolve_config(args)
    model = config.model()
    policy, _ = load_policy(args.checkpoint, model, args.policy_index)
    base = _pick(_dist_set(config, "train", model), args.base_index, "base distribution")
    join = _pick(_dist_set(config, args.join_dists, model), args.join_index, "joining distribution")
    res = adhoc_scenario(policy, base, args.join_time, join, args.n_base, args.n_new, model)
    payload = {
        "weights": list(res.weights),
        "terminal_entropy": res.terminal_entropy,
        "tv_to_uniform": res.tv_to_uniform,
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        np.savetxt(out / "flow.csv", res.flow, delimiter=",", fmt="%.17g")
        (out / "adhoc.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _emit(payload)
    return EXIT_OK


def cmd_ablate_buffer(args) -> int:
    config = resolve_config(args)
    res = ablation_buffer_sizes(config, _ints(args.capacities))
    _emit({"table": str(res.table), "final_mean": {str(c): res.final_mean(c) for c in res.capacities}})
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = resolve_config(args)
    taus = _floats(args.taus) if args.taus else [None]
    alphas = _floats(args.alphas) if args.alphas else [None]
    res = sweep(config, taus, alphas)
    _emit({"index": str(res.index), "cells": len(res.cells)})
    return EXIT_OK


def cmd_gen_dists(args) -> int:
    config = resolve_config(args)
    model = config.model()
    dists = _dist_set(config, args.dists, model)
    out = sys.stdout if not args.out else open(args.out, "w", newline="")
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("distribution", *[f"x{i}" for i in range(model.n_states)]))
        for i, mu in enumerate(dists):
            w.writerow((i, *[repr(float(v)) for v in mu]))
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_check_theorem1(args) -> int:
    rows = theorem1_suite(args.instances, args.check_seed, _floats(args.taus), args.iterations)
    worst = max(r.deviation for r in rows)
    for r in rows:
        print(f"instance {r.instance:3d} |X|={r.n_states:2d} |A|={r.n_actions} N_T={r.horizon:2d} "
              f"tau={r.tau:g} deviation={r.deviation:.3e}")
    status = "PASS" if worst < args.tol else "FAIL"
    print(f"{status} max deviation {worst:.3e} (tolerance {args.tol:g}) over {len(rows)} instances")
    if worst >= args.tol:
        raise CheckFailed(f"max policy deviation {worst:.3e} >= {args.tol:g}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _common(p) -> None:
    p.add_argument("--config", required=False, help="INI experiment config")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    p.add_argument("--seed", action="append", type=int, help="seed (repeatable); replaces the config's list")
    p.add_argument("--output-dir", help="override experiment.output_dir")


def _policy_args(p) -> None:
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--policy-index", type=int, default=0, help="which tabular policy (one per training distribution)")


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation failures (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mfg-omd", description="Mean-field game solvers and experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="run an experiment for every seed")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-exploitability", help="exact exploitability of a checkpoint")
    _common(p)
    _policy_args(p)
    p.add_argument("--dists", choices=("train", "test"), default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-density", help="write mu_n tables induced by a checkpoint")
    _common(p)
    _policy_args(p)
    p.add_argument("--dists", choices=("train", "test"), default="train")
    p.add_argument("--dist-index", type=int, default=0)
    p.add_argument("--timesteps", help="comma-separated steps (default: all)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_density)

    p = sub.add_parser("adhoc", help="inject a joining population mid-episode")
    _common(p)
    _policy_args(p)
    p.add_argument("--base-index", type=int, default=0)
    p.add_argument("--join-dists", choices=("train", "test"), default="train")
    p.add_argument("--join-index", type=int, default=0)
    p.add_argument("--join-time", type=int, required=True)
    p.add_argument("--n-base", type=int, default=500)
    p.add_argument("--n-new", type=int, default=200)
    p.add_argument("--out")
    p.set_defaults(func=cmd_adhoc)

    p = sub.add_parser("ablate-buffer", help="compare replay capacities")
    _common(p)
    p.add_argument("--capacities", required=True, help="comma-separated capacities")
    p.set_defaults(func=cmd_ablate_buffer)

    p = sub.add_parser("sweep", help="grid over omd_tau and omd_alpha")
    _common(p)
    p.add_argument("--taus")
    p.add_argument("--alphas")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-dists", help="print a generated distribution set as CSV")
    _common(p)
    p.add_argument("--dists", choices=("train", "test"), default="train")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_dists)

    p = sub.add_parser("check-theorem1", help="Munchausen vs explicit-sum OMD on random small games")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--check-seed", type=int, default=0)
    p.add_argument("--taus", default="1,5,50")
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--tol", type=float, default=THEOREM1_TOL)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_check_theorem1)
    return parser


def _failure_record(args, exc: BaseException) -> dict:
    record = {
        "status": "failed",
        "command": args.command,
        "error_type": type(exc).__name__,
        "message": str(exc),
        "traceback": traceback.format_exception(type(exc), exc, exc.__traceback__),
    }
    if isinstance(exc, RunFailure) and exc.record is not None:
        record["run_record"] = str(exc.record)
    out_dir = Path(getattr(args, "output_dir", None) or ".")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "failure.json"
        path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        record["record"] = str(path)
    except OSError:
        pass
    return record


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 2
        record = _failure_record(args, exc)
        print(json.dumps({k: v for k, v in record.items() if k != "traceback"}, sort_keys=True), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
