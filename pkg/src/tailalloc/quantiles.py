"""VaR threshold pre-computation defining the level schedules.

Per run, the empirical quantiles of the aggregate loss over ``n_per_run``
copula draws; the table entry is the across-run mean.  The empirical quantile
convention is the type-1 order statistic at index ceil(alpha * n).  Tables
persist to JSON keyed by a fingerprint of the model configuration so the
expensive pre-runs are reused across experiments.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .copulas import CopulaModel, copula_to_config
from .geometry import LevelSchedule, aggregate_loss
from .marginals import Marginal, marginal_to_config
from .rng import generator as _make_generator

__all__ = [
    "QuantileTable",
    "model_fingerprint",
    "estimate_quantiles",
    "build_level_schedule",
    "save_table",
    "load_table",
]

_ALPHA_MATCH_TOL = 1e-12


def model_fingerprint(copula: CopulaModel, marginals: Sequence[Marginal]) -> str:
    """Stable hash of the joint model configuration."""
    payload = {
        "copula": copula_to_config(copula),
        "marginals": [marginal_to_config(m) for m in marginals],
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class QuantileTable:
    alphas: tuple[float, ...]
    var_estimates: tuple[float, ...]
    n_per_run: int
    n_runs: int
    fingerprint: str
    seed: int

    def __post_init__(self):
        if len(self.alphas) != len(self.var_estimates) or not self.alphas:
            raise ValueError("table needs matching, nonempty alphas/estimates")
        if not all(a < b for a, b in zip(self.var_estimates, self.var_estimates[1:])):
            raise ValueError("var estimates must be strictly increasing in alpha")

    def threshold_for(self, alpha: float) -> float:
        for a, b in zip(self.alphas, self.var_estimates):
            if abs(a - alpha) <= _ALPHA_MATCH_TOL:
                return b
        raise KeyError(f"alpha {alpha} not in the quantile table")


def estimate_quantiles(
    copula: CopulaModel,
    marginals: Sequence[Marginal],
    alphas: Sequence[float],
    n_per_run: int,
    n_runs: int,
    seed: int,
    chunk: int = 500_000,
) -> QuantileTable:
    """Across-run mean of per-run empirical aggregate-loss quantiles.

    Run r draws from the substream (seed, r); only the aggregate losses are
    retained, so memory stays at one float per draw.
    """
    alphas = sorted(float(a) for a in alphas)
    if not all(0.0 < a < 1.0 for a in alphas):
        raise ValueError("alphas must lie in (0, 1)")
    acc = np.zeros(len(alphas))
    # type-1 empirical quantile: order statistic at ceil(alpha * n), 1-based
    idx = np.maximum(np.ceil(np.asarray(alphas) * n_per_run).astype(int), 1) - 1
    for run in range(n_runs):
        rng = _make_generator(seed, run)
        sums = np.empty(n_per_run)
        done = 0
        while done < n_per_run:
            m = min(chunk, n_per_run - done)
            u = copula.sample(m, rng)
            sums[done : done + m] = aggregate_loss(marginals, u)
            done += m
        sums.sort()
        acc += sums[idx]
    estimates = acc / n_runs
    return QuantileTable(
        alphas=tuple(alphas),
        var_estimates=tuple(float(v) for v in estimates),
        n_per_run=int(n_per_run),
        n_runs=int(n_runs),
        fingerprint=model_fingerprint(copula, marginals),
        seed=int(seed),
    )


def build_level_schedule(table: QuantileTable, target_alpha: float) -> LevelSchedule:
    """All grid levels up to and including the target."""
    if target_alpha < table.alphas[0] - _ALPHA_MATCH_TOL:
        raise ValueError("target alpha below the first grid point")
    table.threshold_for(target_alpha)  # must be present
    keep = [
        (a, b)
        for a, b in zip(table.alphas, table.var_estimates)
        if a <= target_alpha + _ALPHA_MATCH_TOL
    ]
    return LevelSchedule(
        alphas=tuple(a for a, _ in keep), thresholds=tuple(b for _, b in keep)
    )


def save_table(table: QuantileTable, path: Union[str, Path]) -> None:
    payload = {
        "fingerprint": table.fingerprint,
        "alphas": list(table.alphas),
        "var": list(table.var_estimates),
        "n_per_run": table.n_per_run,
        "n_runs": table.n_runs,
        "seed": table.seed,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_table(path: Union[str, Path]) -> QuantileTable:
    payload = json.loads(Path(path).read_text())
    return QuantileTable(
        alphas=tuple(payload["alphas"]),
        var_estimates=tuple(payload["var"]),
        n_per_run=int(payload["n_per_run"]),
        n_runs=int(payload["n_runs"]),
        fingerprint=str(payload["fingerprint"]),
        seed=int(payload["seed"]),
    )
