"""Command-line harness.

Subcommands:
  quantiles   build or refresh the persisted VaR table
  run         full experiment (repetitions, metrics, CSV/JSON outputs)
  allocate    one allocation with a chosen method
  curvature   convexity verdicts along the constraint curve
  report      re-aggregate metrics from an existing runs.csv

Exit codes: 0 success, 2 configuration/usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import is_ach_estimate, mc_rejection_estimate
from .config import ConfigError, load_config
from .estimators import (
    euler_es_allocation,
    euler_var_allocation,
    hierarchical_rollup,
    stddev_allocation,
    write_report_csv,
    write_report_json,
)
from .geometry import curve_point, is_convex_at
from .quantiles import build_level_schedule
from .rng import generator as _make_generator
from .runner import (
    METHOD_IDS,
    ensure_quantile_table,
    reaggregate,
    run_experiment,
)
from .smc import run_smc_sampler

__all__ = ["main", "entry_point"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tailalloc",
        description="Rare-event capital allocation for copula-dependent losses",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML or JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=1, help="repetition worker count")

    p_quant = sub.add_parser("quantiles", help="build/refresh the VaR quantile table")
    common(p_quant)

    p_run = sub.add_parser("run", help="run the configured experiment")
    common(p_run)

    p_alloc = sub.add_parser("allocate", help="single allocation with one method")
    common(p_alloc)
    p_alloc.add_argument(
        "--method",
        default="smc",
        choices=["mc", "smc", "is_ach", "smc_var", "sd"],
        help="estimator (smc_var: band-conditioned VaR contributions)",
    )
    p_alloc.add_argument("--alpha", type=float, default=None, help="target level")
    p_alloc.add_argument("--samples", type=int, default=100_000, help="sd-method sample size")

    p_curv = sub.add_parser("curvature", help="convexity verdicts along the constraint curve")
    common(p_curv)
    p_curv.add_argument("--B", type=float, required=True, help="aggregate-loss threshold")
    p_curv.add_argument("--points", type=int, default=99, help="grid size along u1")

    p_rep = sub.add_parser("report", help="re-aggregate metrics from runs.csv")
    common(p_rep)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors, 0 for --help
        return int(exc.code or 0)
    try:
        config = load_config(args.config, seed=args.seed, out=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _dispatch(args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure contract
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry_point() -> None:  # console script
    sys.exit(main())


def _dispatch(args, config) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "quantiles":
        ensure_quantile_table(config)
        return 0
    if args.command == "run":
        report = run_experiment(config, threads=args.threads)
        print(f"wrote {out / 'metrics.json'}, {out / 'runs.csv'}, {out / 'curves.csv'}")
        if report.failures:
            print(f"failures: {report.failures}")
        return 0
    if args.command == "allocate":
        return _allocate(args, config)
    if args.command == "curvature":
        return _curvature(args, config)
    if args.command == "report":
        runs_path = out / "runs.csv"
        if not runs_path.exists():
            raise ConfigError(f"no runs.csv under {out}")
        report = reaggregate(config, runs_path)
        (out / "metrics.json").write_text(
            json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
        )
        print(f"re-aggregated {runs_path} -> {out / 'metrics.json'}")
        return 0
    raise ConfigError(f"unknown command {args.command}")


def _allocate(args, config) -> int:
    out = Path(config.out_dir)
    alpha = args.alpha if args.alpha is not None else sorted(config.targets)[-1]
    if args.method == "sd":
        report = stddev_allocation(config.copula, config.marginals, args.samples, config.seed)
    else:
        table = ensure_quantile_table(config)
        threshold = table.threshold_for(alpha)
        if args.method == "mc":
            report, _ = mc_rejection_estimate(
                config.copula, config.marginals, threshold, config.n_mc,
                _make_generator(config.seed, 0, METHOD_IDS["mc"]), alpha=alpha,
            )
        elif args.method == "is_ach":
            report, _ = is_ach_estimate(
                config.copula, config.marginals, threshold, config.mixing,
                config.n_is, _make_generator(config.seed, 0, METHOD_IDS["is_ach"]),
                alpha=alpha,
            )
        else:
            schedule = build_level_schedule(table, alpha)
            regions = (
                schedule.var_band_regions()
                if args.method == "smc_var"
                else schedule.tail_regions()
            )
            systems = run_smc_sampler(
                config.copula, config.marginals, regions, config.n_smc, config.kernel,
                move_sweeps=config.move_sweeps, ess_threshold=config.ess_threshold,
                resample_scheme=config.resample_scheme, seed=config.seed,
                seed_key=(0, METHOD_IDS["smc"]),
            )
            if args.method == "smc_var":
                report = euler_var_allocation(
                    systems[-1], config.marginals, regions[-1].epsilon, alpha, method="smc_var"
                )
            else:
                report = euler_es_allocation(systems[-1], config.marginals, alpha, method="smc")
    grouping = config.grouping()
    if grouping is not None and report.risk_measure == "ES":
        report = hierarchical_rollup(report, grouping)
    write_report_json(report, out / "allocation.json")
    write_report_csv(report, out / "allocation.csv")
    print(f"{report.risk_measure} allocation ({report.method or args.method}), alpha={alpha}")
    for i, c in enumerate(report.contributions):
        print(f"  cell {i + 1}: {c:.6g}")
    print(f"  total: {report.total:.6g}")
    if report.group_rollup:
        for name, value in sorted(report.group_rollup.items()):
            print(f"  group {name}: {value:.6g}")
    return 0


def _curvature(args, config) -> int:
    out = Path(config.out_dir)
    marginals = config.marginals
    d = len(marginals)
    if d < 2:
        raise ConfigError("curvature needs at least two marginals")
    rows = []
    for u1 in np.linspace(0.01, 0.99, args.points):
        u_minus_d = np.full(d - 1, 0.5)
        u_minus_d[0] = u1
        try:
            r = curve_point(marginals, args.B, u_minus_d)
            convex = is_convex_at(marginals, args.B, u_minus_d)
        except ValueError:
            continue  # off the curve: residual outside the marginal support
        rows.append((u1, r, convex))
    path = out / "curvature.csv"
    with open(path, "w") as fh:
        fh.write("u1,r,convex\n")
        for u1, r, convex in rows:
            fh.write(f"{u1!r},{r!r},{convex}\n")
    n_convex = sum(1 for _, _, c in rows if c)
    print(f"wrote {path}: {len(rows)} curve points, {n_convex} convex")
    return 0
