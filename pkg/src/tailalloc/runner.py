"""Experiment runner: seeded repetitions, metrics, file emission.

Per repetition r, method M runs on the substream (seed, r, method_id) so that
repetitions can execute in any order (or in a worker pool) without changing
results.  ``runs.csv`` holds one row per (repetition, method, alpha, cell)
with cell "1".."d" plus "ES"; it contains no timing columns so reruns with
the same master seed are byte-identical.  Timings live in ``metrics.json``
and are reported, never asserted.

Efficiency metrics versus the rejection-MC baseline:

    Relative Bias        (mean_M - mean_MC) / mean_MC
    Variance Reduction   SMC:    N_MC Var_MC / (T N_SMC Var_SMC)
                         IS-ACH: N_MC Var_MC / (E[N_V] N_IS Var_IS)

with T the number of schedule levels up to the level being scored and
E[N_V] the across-repetition mean of the observed rejection draws.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from math import log10, nan
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import (
    DrawCapExceededError,
    EstimateUnavailableError,
    is_ach_estimate,
    mc_rejection_estimate,
)
from .config import ExperimentConfig
from .estimators import AllocationReport, euler_es_allocation
from .quantiles import (
    QuantileTable,
    build_level_schedule,
    estimate_quantiles,
    load_table,
    model_fingerprint,
    save_table,
)
from .rng import generator as _make_generator
from .smc import LevelFailureError, run_smc_sampler

__all__ = [
    "METHOD_IDS",
    "RepetitionRow",
    "MetricsEntry",
    "MetricsReport",
    "ensure_quantile_table",
    "run_repetition",
    "run_experiment",
    "compute_metrics",
    "write_runs_csv",
    "read_runs_csv",
    "reaggregate",
]

logger = logging.getLogger("tailalloc")

METHOD_IDS = {"mc": 1, "smc": 2, "is_ach": 3}

RUNS_HEADER = ["repetition", "method", "alpha", "target", "estimate", "levels", "draws", "aux"]


@dataclass(frozen=True)
class RepetitionRow:
    repetition: int
    method: str
    alpha: float
    target: str  # "1".."d" or "ES"
    estimate: float
    levels: int  # schedule levels consumed (SMC), 0 otherwise
    draws: int  # unconditional draws (MC) / candidate draws (IS-ACH)
    aux: float  # observed mean rejection draws (IS-ACH), else nan


@dataclass(frozen=True)
class MetricsEntry:
    method: str
    alpha: float
    target: str
    mean: float
    variance: float | None
    relative_bias: float | None
    variance_reduction: float | None
    mean_seconds: float | None


@dataclass
class MetricsReport:
    entries: list[MetricsEntry]
    failures: dict[str, int]
    n_repetitions: int

    def entry(self, method: str, alpha: float, target: str) -> MetricsEntry:
        for e in self.entries:
            if e.method == method and abs(e.alpha - alpha) <= 1e-12 and e.target == target:
                return e
        raise KeyError((method, alpha, target))

    def to_json_dict(self) -> dict:
        return {
            "n_repetitions": self.n_repetitions,
            "failures": dict(sorted(self.failures.items())),
            "entries": [
                {
                    "method": e.method,
                    "alpha": e.alpha,
                    "target": e.target,
                    "mean": e.mean,
                    "variance": e.variance,
                    "relative_bias": e.relative_bias,
                    "variance_reduction": e.variance_reduction,
                    "mean_seconds": e.mean_seconds,
                }
                for e in self.entries
            ],
        }


# ---------------------------------------------------------------------------
# quantile table management
# ---------------------------------------------------------------------------


def ensure_quantile_table(config: ExperimentConfig) -> QuantileTable:
    """Load the persisted table when it matches the model and protocol,
    otherwise build and persist it."""
    path = Path(config.out_dir) / "quantiles.json"
    fingerprint = model_fingerprint(config.copula, config.marginals)
    if path.exists():
        table = load_table(path)
        if (
            table.fingerprint == fingerprint
            and table.n_per_run == config.quantile_n_per_run
            and table.n_runs == config.quantile_n_runs
            and table.seed == config.seed
            and set(np.round(config.alphas, 12)) <= set(np.round(table.alphas, 12))
        ):
            logger.info("reusing persisted quantile table %s", path)
            return table
        logger.info("persisted quantile table is stale, rebuilding")
    table = estimate_quantiles(
        config.copula,
        config.marginals,
        config.alphas,
        config.quantile_n_per_run,
        config.quantile_n_runs,
        config.seed,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    save_table(table, path)
    logger.info("wrote quantile table %s", path)
    return table


# ---------------------------------------------------------------------------
# repetitions
# ---------------------------------------------------------------------------


def _report_rows(
    rep: int,
    method: str,
    alpha: float,
    report: AllocationReport,
    levels: int,
    draws: int,
    aux: float,
) -> list[RepetitionRow]:
    rows = [
        RepetitionRow(rep, method, alpha, str(k + 1), float(c), levels, draws, aux)
        for k, c in enumerate(report.contributions)
    ]
    rows.append(RepetitionRow(rep, method, alpha, "ES", float(report.total), levels, draws, aux))
    return rows


def run_repetition(config: ExperimentConfig, table: QuantileTable, rep: int):
    """Run every configured method once; returns (rows, seconds, failures)."""
    rows: list[RepetitionRow] = []
    seconds: dict[str, float] = {}
    failures: list[str] = []
    targets = sorted(config.targets)
    for method in config.methods:
        start = time.perf_counter()
        try:
            if method == "smc":
                rows.extend(_run_smc_once(config, table, rep, targets))
            elif method == "mc":
                rows.extend(_run_mc_once(config, table, rep, targets))
            elif method == "is_ach":
                rows.extend(_run_is_once(config, table, rep, targets))
        except (LevelFailureError, EstimateUnavailableError, DrawCapExceededError) as exc:
            failures.append(f"{method}: {exc}")
        seconds[method] = time.perf_counter() - start
    return rows, seconds, failures


def _run_smc_once(config, table, rep, targets):
    schedule = build_level_schedule(table, targets[-1])
    systems = run_smc_sampler(
        config.copula,
        config.marginals,
        schedule,
        config.n_smc,
        config.kernel,
        move_sweeps=config.move_sweeps,
        ess_threshold=config.ess_threshold,
        resample_scheme=config.resample_scheme,
        seed=config.seed,
        seed_key=(rep, METHOD_IDS["smc"]),
    )
    rows = []
    for alpha in targets:
        idx = next(
            i for i, a in enumerate(schedule.alphas) if abs(a - alpha) <= 1e-12
        )
        report = euler_es_allocation(systems[idx], config.marginals, alpha, method="smc")
        rows.extend(_report_rows(rep, "smc", alpha, report, levels=idx + 1, draws=0, aux=nan))
    return rows


def _run_mc_once(config, table, rep, targets):
    rng = _make_generator(config.seed, rep, METHOD_IDS["mc"])
    rows = []
    for alpha in targets:
        report, draws = mc_rejection_estimate(
            config.copula,
            config.marginals,
            table.threshold_for(alpha),
            config.n_mc,
            rng,
            alpha=alpha,
        )
        rows.extend(_report_rows(rep, "mc", alpha, report, levels=0, draws=draws, aux=nan))
    return rows


def _run_is_once(config, table, rep, targets):
    rng = _make_generator(config.seed, rep, METHOD_IDS["is_ach"])
    rows = []
    for alpha in targets:
        report, diag = is_ach_estimate(
            config.copula,
            config.marginals,
            table.threshold_for(alpha),
            config.mixing,
            config.n_is,
            rng,
            alpha=alpha,
        )
        rows.extend(
            _report_rows(
                rep,
                "is_ach",
                alpha,
                report,
                levels=0,
                draws=diag.total_draws,
                aux=diag.mean_rejection_draws,
            )
        )
    return rows


def _worker(args):
    config, table, rep = args
    return rep, run_repetition(config, table, rep)


# ---------------------------------------------------------------------------
# the experiment
# ---------------------------------------------------------------------------


def run_experiment(config: ExperimentConfig, threads: int = 1) -> MetricsReport:
    """All repetitions of all methods, plus metrics and artifact files."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = ensure_quantile_table(config)

    results: dict[int, tuple] = {}
    reps = range(config.n_repetitions)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for rep, payload in pool.map(_worker, [(config, table, r) for r in reps]):
                results[rep] = payload
    else:
        for rep in reps:
            results[rep] = run_repetition(config, table, rep)

    rows: list[RepetitionRow] = []
    seconds: dict[str, list[float]] = {m: [] for m in config.methods}
    failures: dict[str, int] = {}
    for rep in reps:
        rep_rows, rep_seconds, rep_failures = results[rep]
        rows.extend(rep_rows)
        for m, s in rep_seconds.items():
            seconds[m].append(s)
        for f in rep_failures:
            key = f.split(":", 1)[0]
            failures[key] = failures.get(key, 0) + 1

    mean_seconds = {m: (sum(v) / len(v) if v else None) for m, v in seconds.items()}
    report = compute_metrics(rows, config, mean_seconds=mean_seconds, failures=failures)

    write_runs_csv(rows, out / "runs.csv")
    (out / "metrics.json").write_text(
        json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
    )
    _write_curves_csv(report, out / "curves.csv")
    return report


def compute_metrics(
    rows: Sequence[RepetitionRow],
    config: ExperimentConfig,
    mean_seconds: dict[str, float] | None = None,
    failures: dict[str, int] | None = None,
) -> MetricsReport:
    mean_seconds = mean_seconds or {}
    by_key: dict[tuple, list[RepetitionRow]] = {}
    for row in rows:
        by_key.setdefault((row.method, row.alpha, row.target), []).append(row)

    entries: list[MetricsEntry] = []
    for (method, alpha, target), group in sorted(by_key.items()):
        estimates = np.array([r.estimate for r in group], dtype=float)
        mean = float(estimates.mean())
        variance = float(estimates.var(ddof=1)) if estimates.size >= 2 else None
        rb = vr = None
        mc_group = by_key.get(("mc", alpha, target))
        if method != "mc" and mc_group:
            mc_est = np.array([r.estimate for r in mc_group], dtype=float)
            mc_mean = float(mc_est.mean())
            if mc_mean != 0.0:
                rb = (mean - mc_mean) / mc_mean
            mc_var = float(mc_est.var(ddof=1)) if mc_est.size >= 2 else None
            if mc_var is not None and variance is not None:
                if mc_var == 0.0:
                    vr = None  # degenerate baseline, flagged by absence
                elif method == "smc":
                    levels = group[0].levels
                    vr = (config.n_mc * mc_var) / (levels * config.n_smc * variance)
                elif method == "is_ach":
                    mean_nv = float(np.mean([r.aux for r in group]))
                    vr = (config.n_mc * mc_var) / (mean_nv * config.n_is * variance)
        entries.append(
            MetricsEntry(
                method=method,
                alpha=alpha,
                target=target,
                mean=mean,
                variance=variance,
                relative_bias=rb,
                variance_reduction=vr,
                mean_seconds=mean_seconds.get(method),
            )
        )
    n_reps = len({r.repetition for r in rows}) if rows else 0
    return MetricsReport(entries=entries, failures=failures or {}, n_repetitions=n_reps)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def write_runs_csv(rows: Sequence[RepetitionRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUNS_HEADER)
        for r in rows:
            writer.writerow(
                [
                    r.repetition,
                    r.method,
                    repr(r.alpha),
                    r.target,
                    repr(r.estimate),
                    r.levels,
                    r.draws,
                    "" if np.isnan(r.aux) else repr(r.aux),
                ]
            )


def read_runs_csv(path) -> list[RepetitionRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RUNS_HEADER:
            raise ValueError(f"unexpected runs.csv header in {path}")
        for rec in reader:
            rows.append(
                RepetitionRow(
                    repetition=int(rec["repetition"]),
                    method=rec["method"],
                    alpha=float(rec["alpha"]),
                    target=rec["target"],
                    estimate=float(rec["estimate"]),
                    levels=int(rec["levels"]),
                    draws=int(rec["draws"]),
                    aux=float(rec["aux"]) if rec["aux"] else nan,
                )
            )
    return rows


def _write_curves_csv(report: MetricsReport, path) -> None:
    """Plot data: one row per (alpha, method, target, metric)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "method", "target", "metric", "value"])
        for e in report.entries:
            if e.relative_bias is not None:
                writer.writerow([repr(e.alpha), e.method, e.target, "relative_bias", repr(e.relative_bias)])
            if e.variance_reduction is not None and e.variance_reduction > 0:
                writer.writerow(
                    [
                        repr(e.alpha),
                        e.method,
                        e.target,
                        "log10_variance_reduction",
                        repr(log10(e.variance_reduction)),
                    ]
                )


def reaggregate(config: ExperimentConfig, runs_path) -> MetricsReport:
    """Recompute metrics from an existing runs.csv (no timings)."""
    rows = read_runs_csv(runs_path)
    return compute_metrics(rows, config)
