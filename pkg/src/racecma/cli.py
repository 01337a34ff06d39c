"""Benchmark command line: compare, sweep, converge, validate."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .bench import ExperimentSpec, run_compare, run_convergence, run_sweep
from .config import (
    actions_from_config,
    ipn_from_config,
    load_config,
    racing_from_config,
    scenario_from_config,
    spsa_from_config,
    weights_from_config,
)
from .feedback import ThresholdVector
from .validate import validate, write_validation_report


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.split(","))


def build_spec(args: argparse.Namespace) -> ExperimentSpec:
    """Benchmark defaults, overlaid with config-file keys, then CLI flags."""
    cfg = load_config(args.config) if args.config else {}
    base = ExperimentSpec()

    exp = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("experiment.")}
    spec = replace(
        base,
        scenario=scenario_from_config(cfg, base.scenario),
        actions=actions_from_config(cfg, base.actions),
        weights=weights_from_config(cfg, base.weights),
        racing=racing_from_config(cfg, base.racing),
        ipn=ipn_from_config(cfg, base.ipn),
        spsa=spsa_from_config(cfg, base.spsa),
        methods=tuple(exp["methods"].split(",")) if "methods" in exp else base.methods,
        repetitions=int(exp.get("repetitions", base.repetitions)),
        power_grid=_floats(exp["power_grid"]) if "power_grid" in exp else base.power_grid,
        budget=float(exp.get("budget", base.budget)),
        master_seed=int(exp.get("master_seed", base.master_seed)),
        generations=int(exp.get("generations", base.generations)),
        convergence_powers=_floats(exp["convergence_powers"])
        if "convergence_powers" in exp else base.convergence_powers,
        resi_bounds=_floats(exp["resi_bounds"]) if "resi_bounds" in exp else base.resi_bounds,
        fixed_thresholds=ThresholdVector.from_array(_floats(exp["fixed_thresholds"]))
        if "fixed_thresholds" in exp else base.fixed_thresholds,
        ue_box=_floats(exp["ue_box"]) if "ue_box" in exp else base.ue_box,
        init_sigma=float(exp.get("init_sigma", base.init_sigma)),
        eval_repeats=int(exp.get("eval_repeats", base.eval_repeats)),
        sweep_weights=_floats(exp["sweep_weights"])
        if "sweep_weights" in exp else base.sweep_weights,
        sweep_stage2_repetitions=int(
            exp.get("sweep_stage2_repetitions", base.sweep_stage2_repetitions)
        ),
        population=int(cfg.get("cma.population", base.population)),
        map_min_samples=int(exp.get("map_min_samples", base.map_min_samples)),
        map_episodes=int(exp.get("map_episodes", base.map_episodes)),
    )

    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.reps is not None:
        overrides["repetitions"] = args.reps
    if args.budget is not None:
        overrides["budget"] = args.budget
    if args.methods is not None:
        overrides["methods"] = tuple(args.methods.split(","))
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    return replace(spec, **overrides) if overrides else spec


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key-value config file")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--reps", type=int, help="repetition count override")
    parser.add_argument("--budget", type=float, help="per-run evaluation budget (N_eq)")
    parser.add_argument("--methods", help="comma-separated method subset")
    parser.add_argument("--jobs", type=int, help="parallel repetition workers")
    parser.add_argument("--out", type=Path, required=True, help="output directory")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="racecma",
        description="Benchmarks for racing threshold optimization on the bistatic sensing loop",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("compare", "method comparison: improvement, cost, efficiency"),
        ("sweep", "fixed-vs-tuned thresholds across transmit powers"),
        ("converge", "best-so-far detection reliability per generation"),
    ):
        cmd = sub.add_parser(name, help=helptext)
        _add_common(cmd)

    val = sub.add_parser("validate", help="run the acceptance checks")
    val.add_argument("--config", type=Path, help="key-value config file")
    val.add_argument("--seed", type=int, help="master seed override")
    val.add_argument("--reps", type=int, help="repetition count override")
    val.add_argument("--budget", type=float, help="per-run budget override")
    val.add_argument("--methods", help="unused; accepted for flag symmetry")
    val.add_argument("--jobs", type=int, help="parallel repetition workers")
    val.add_argument("--out", type=Path, help="directory for the report CSV")
    val.add_argument("--full", action="store_true",
                     help="include the Monte-Carlo comparison checks")

    args = parser.parse_args(argv)

    if args.command == "validate":
        full_spec = build_spec(args) if args.full else None
        passed, results = validate(
            level="full" if args.full else "quick",
            full_spec=full_spec,
            scratch=args.out / "scratch" if args.out else None,
        )
        for result in results:
            print(f"{'PASS' if result.passed else 'FAIL'}  {result.name}: {result.detail}")
        if args.out:
            write_validation_report(results, args.out / "validation.csv")
        return 0 if passed else 1

    spec = build_spec(args)
    if args.command == "compare":
        rows = run_compare(spec, args.out)
        for row in rows:
            print(
                f"{row.method:10s} dJ={row.delta_j:+.4f} N_eq={row.n_eq:7.2f} "
                f"eff={row.efficiency:.4f}"
            )
    elif args.command == "sweep":
        for row in run_sweep(spec, args.out):
            print(
                f"{row[0]:5.1f} dBm {row[1]:5s} J_det={row[2]:.4f} "
                f"J_lat={row[4]:.4f} sense={row[6]:.4f}"
            )
    elif args.command == "converge":
        for row in run_convergence(spec, args.out):
            print(
                f"{row[0]:5.1f} dBm {row[1]:10s} gen={row[2]:2d} J_det={row[3]:.4f}"
            )
    print(f"outputs written to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
