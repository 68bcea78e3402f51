"""Allocation estimators over weighted U-space particles.

A particle system at a tail level yields the per-cell conditional
expectations E[X_k | sum X > B] whose sum is the expected-shortfall estimate;
a band-level system yields the VaR-style contributions; the standard
deviation allocation needs no conditioning and is a plain Monte Carlo
covariance ratio.  All three satisfy the full-allocation identity by
construction.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .copulas import CopulaModel
from .geometry import aggregate_loss
from .marginals import Marginal
from .rng import generator as _make_generator
from .smc import ParticleSystem

__all__ = [
    "AllocationReport",
    "conditional_expectation",
    "euler_es_allocation",
    "euler_var_allocation",
    "stddev_allocation",
    "hierarchical_rollup",
    "write_report_json",
    "write_report_csv",
]


@dataclass(frozen=True)
class AllocationReport:
    """Per-cell capital contributions plus their exactly-allocated total."""

    contributions: tuple[float, ...]
    total: float
    risk_measure: str  # "ES" | "VaR" | "StdDev"
    alpha: float | None = None
    method: str = ""
    seed: int | None = None
    epsilon: float | None = None
    cell_groups: tuple[str, ...] | None = None
    group_rollup: dict[str, float] | None = None

    @property
    def dim(self) -> int:
        return len(self.contributions)


def conditional_expectation(
    system: ParticleSystem,
    marginals: Sequence[Marginal],
    target: Union[int, str],
) -> float:
    """Weighted mean of h over quantile-transformed particles.

    ``target`` is a 0-based cell index for h(x) = x_k, or ``"sum"`` for
    h(x) = sum_i x_i.
    """
    if system.n == 0 or system.weights.sum() <= 0.0:
        raise ValueError("empty or dead particle system")
    w = system.weights / system.weights.sum()
    if target == "sum":
        values = aggregate_loss(marginals, system.points)
    else:
        k = int(target)
        if not 0 <= k < len(marginals):
            raise ValueError(f"cell index {k} out of range")
        values = marginals[k].quantile(system.points[:, k], clamp=True)
    return float(w @ values)


def euler_es_allocation(
    system: ParticleSystem,
    marginals: Sequence[Marginal],
    alpha: float | None = None,
    method: str = "",
    seed: int | None = None,
) -> AllocationReport:
    """Expected-shortfall contributions from a tail-level system: the
    per-cell tail-conditional expectations, totalling their sum."""
    contributions = tuple(
        conditional_expectation(system, marginals, k) for k in range(len(marginals))
    )
    return AllocationReport(
        contributions=contributions,
        total=float(sum(contributions)),
        risk_measure="ES",
        alpha=alpha,
        method=method,
        seed=seed,
    )


def euler_var_allocation(
    system: ParticleSystem,
    marginals: Sequence[Marginal],
    epsilon: float,
    alpha: float | None = None,
    method: str = "",
    seed: int | None = None,
) -> AllocationReport:
    """VaR contributions from a band-level system (conditioning on the
    aggregate loss lying within epsilon of the threshold)."""
    contributions = tuple(
        conditional_expectation(system, marginals, k) for k in range(len(marginals))
    )
    return AllocationReport(
        contributions=contributions,
        total=float(sum(contributions)),
        risk_measure="VaR",
        alpha=alpha,
        method=method,
        seed=seed,
        epsilon=float(epsilon),
    )


def stddev_allocation(
    copula: CopulaModel,
    marginals: Sequence[Marginal],
    n_samples: int,
    seed: int,
) -> AllocationReport:
    """Covariance contributions Cov(X_i, X)/sd(X) by plain Monte Carlo.

    Numerator and denominator use the same sample covariance, so the
    contributions sum to the sd estimate exactly.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    rng = _make_generator(seed)
    u = copula.sample(n_samples, rng)
    x = np.empty_like(u)
    for i, marginal in enumerate(marginals):
        x[:, i] = marginal.quantile(u[:, i], clamp=True)
    total = x.sum(axis=1)
    var_total = total.var(ddof=1)
    if var_total <= 0.0:
        raise ValueError("degenerate aggregate variance")
    sd_total = float(np.sqrt(var_total))
    centred = x - x.mean(axis=0)
    cov = centred.T @ (total - total.mean()) / (n_samples - 1)
    contributions = tuple(float(c / sd_total) for c in cov)
    return AllocationReport(
        contributions=contributions,
        total=sd_total,
        risk_measure="StdDev",
        method="mc",
        seed=seed,
    )


def hierarchical_rollup(
    report: AllocationReport, grouping: Mapping[int, str]
) -> AllocationReport:
    """Aggregate cell contributions to business-unit totals.

    ``grouping`` maps every 0-based cell index to a group label; it must be
    a partition of the cells.  Group sums inherit the full-allocation
    property (two-stage allocation equals direct cell allocation).
    """
    if report.risk_measure != "ES":
        raise ValueError("rollup is defined for ES reports")
    if set(grouping.keys()) != set(range(report.dim)):
        raise ValueError("grouping must cover every cell exactly once")
    rollup: dict[str, float] = {}
    for cell, group in grouping.items():
        rollup[str(group)] = rollup.get(str(group), 0.0) + report.contributions[cell]
    cell_groups = tuple(str(grouping[i]) for i in range(report.dim))
    return replace(report, group_rollup=rollup, cell_groups=cell_groups)


def write_report_json(report: AllocationReport, path: Union[str, Path]) -> None:
    payload = asdict(report)
    payload["contributions"] = list(report.contributions)
    if report.cell_groups is not None:
        payload["cell_groups"] = list(report.cell_groups)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_report_csv(report: AllocationReport, path: Union[str, Path]) -> None:
    """One row per cell: cell (1-based), group, contribution, total, alpha,
    method, seed."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell", "group", "contribution", "total", "alpha", "method", "seed"])
        for i, value in enumerate(report.contributions):
            group = report.cell_groups[i] if report.cell_groups else ""
            writer.writerow(
                [
                    i + 1,
                    group,
                    repr(float(value)),
                    repr(float(report.total)),
                    "" if report.alpha is None else repr(float(report.alpha)),
                    report.method,
                    "" if report.seed is None else report.seed,
                ]
            )
