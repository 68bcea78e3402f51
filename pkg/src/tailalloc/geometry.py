"""Constraint regions in loss space and on the unit cube.

The conditioning event lives in loss space as {sum_i x_i in A}; mapped through
the marginal quantile transforms it becomes a region of [0,1]^d.  Two region
kinds are supported: the tail {sum > B} and the band {|sum - B| <= eps} used
for VaR-style conditioning.

A note on the residual bound: the published display of the bound applies the
quantile transform to a loss-space residual and the cdf to unit-cube
coordinates.  Dimensional analysis (and the worked numeric example it is
meant to reproduce) requires the transposed reading, which is what
``residual_bound`` implements:

    B^u(m) = F_m( max{0, B - sum_{i != m} F_i^{-1}(u_i)} ).

Ties at sum == B count as outside the tail; continuous marginals make the
boundary measure zero, the fixed convention just keeps tests deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .marginals import Marginal

__all__ = [
    "ConstraintRegion",
    "LevelSchedule",
    "aggregate_loss",
    "contains_u",
    "residual_bound",
    "coordinate_bounds",
    "curve_point",
    "curvature_hessian",
    "is_convex_at",
]


def aggregate_loss(marginals: Sequence[Marginal], u) -> np.ndarray:
    """sum_i F_i^{-1}(u_i) for one point (d,) or a batch (n, d).

    Coordinates are clamped away from the cube boundary before inversion so
    particles sitting numerically on 0 or 1 stay finite.
    """
    arr = np.asarray(u, dtype=float)
    single = arr.ndim == 1
    pts = arr[None, :] if single else arr
    if pts.shape[1] != len(marginals):
        raise ValueError("dimension mismatch between marginals and points")
    total = np.zeros(pts.shape[0])
    for i, marginal in enumerate(marginals):
        total += marginal.quantile(pts[:, i], clamp=True)
    return float(total[0]) if single else total


@dataclass(frozen=True)
class ConstraintRegion:
    """Tail {sum > B} or band {sum in (B - eps, B + eps]} in loss units."""

    mode: str
    threshold: float
    epsilon: float = 0.0

    def __post_init__(self):
        if self.mode not in ("tail", "band"):
            raise ValueError("mode must be 'tail' or 'band'")
        if self.mode == "band" and not self.epsilon > 0.0:
            raise ValueError("band regions need epsilon > 0")

    def contains_sums(self, sums):
        """Membership from aggregate losses; band is the composition
        Tail(B - eps) and not Tail(B + eps)."""
        s = np.asarray(sums, dtype=float)
        if self.mode == "tail":
            return s > self.threshold
        return (s > self.threshold - self.epsilon) & ~(s > self.threshold + self.epsilon)

    def contains(self, marginals: Sequence[Marginal], u):
        return self.contains_sums(aggregate_loss(marginals, u))


def contains_u(region: ConstraintRegion, marginals: Sequence[Marginal], u):
    """Whether the quantile-transformed point(s) satisfy the region."""
    return region.contains(marginals, u)


def residual_bound(
    region: ConstraintRegion,
    marginals: Sequence[Marginal],
    u_minus_m: Sequence[float],
    m: int,
) -> float:
    """Smallest u_m keeping the particle inside a tail region.

    ``u_minus_m`` holds the d-1 other coordinates in coordinate order with
    index m (0-based) skipped.  Returns 0 when the other coordinates already
    carry the sum past B.
    """
    if region.mode != "tail":
        raise ValueError("residual_bound is defined for tail regions")
    others = [mm for i, mm in enumerate(marginals) if i != m]
    u_minus_m = np.asarray(u_minus_m, dtype=float)
    if u_minus_m.shape != (len(marginals) - 1,):
        raise ValueError("u_minus_m must have d-1 entries")
    others_sum = aggregate_loss(others, u_minus_m) if others else 0.0
    residual = max(0.0, region.threshold - others_sum)
    return float(marginals[m].cdf(residual))


def coordinate_bounds(
    region: ConstraintRegion,
    marginals: Sequence[Marginal],
    others_sum,
    m: int,
):
    """Feasible (lo, hi) interval for coordinate m given the other losses.

    Vectorized over ``others_sum`` (the aggregate loss of the d-1 fixed
    coordinates).  Tail regions are one-sided with hi = 1.
    """
    s = np.asarray(others_sum, dtype=float)
    marginal = marginals[m]
    if region.mode == "tail":
        lo = marginal.cdf(np.maximum(region.threshold - s, 0.0))
        return lo, np.ones_like(lo)
    lo = marginal.cdf(np.maximum(region.threshold - region.epsilon - s, 0.0))
    hi = marginal.cdf(np.maximum(region.threshold + region.epsilon - s, 0.0))
    return lo, hi


def curve_point(marginals: Sequence[Marginal], threshold: float, u_minus_d) -> float:
    """r(u_{-d}) = F_d(B - sum_{i<d} F_i^{-1}(u_i)) on the constraint curve.

    Raises when the loss residual falls outside the last marginal's support
    (for positive losses: the fixed coordinates already exhaust B).
    """
    residual = _curve_residual(marginals, threshold, u_minus_d)
    return float(marginals[-1].cdf(residual))


def _curve_residual(marginals: Sequence[Marginal], threshold: float, u_minus_d) -> float:
    u_minus_d = np.asarray(u_minus_d, dtype=float)
    if u_minus_d.shape != (len(marginals) - 1,):
        raise ValueError("u_minus_d must have d-1 entries")
    residual = threshold - aggregate_loss(list(marginals[:-1]), u_minus_d)
    lo, hi = marginals[-1].support
    if not lo < residual < hi:
        raise ValueError("constraint-curve residual outside the marginal support")
    return residual


def curvature_hessian(
    marginals: Sequence[Marginal], threshold: float, u_minus_d
) -> np.ndarray:
    """Hessian of r(u_{-d}), with x_i = F_i^{-1}(u_i) and y = B - sum x_i:

    off-diagonal  f_d'(y) / (f_j(x_j) f_k(x_k)),
    diagonal      [f_d'(y) f_j(x_j) + f_d(y) f_j'(x_j)] / f_j(x_j)^3.
    """
    u_minus_d = np.asarray(u_minus_d, dtype=float)
    residual = _curve_residual(marginals, threshold, u_minus_d)
    x = np.array(
        [m.quantile(u, clamp=True) for m, u in zip(marginals[:-1], u_minus_d)]
    )
    f = np.array([m.pdf(xi) for m, xi in zip(marginals[:-1], x)])
    f_prime = np.array([m.pdf_prime(xi) for m, xi in zip(marginals[:-1], x)])
    fd = marginals[-1].pdf(residual)
    fd_prime = marginals[-1].pdf_prime(residual)
    hess = fd_prime / np.outer(f, f)
    diag = (fd_prime * f + fd * f_prime) / f**3
    np.fill_diagonal(hess, diag)
    return hess


def is_convex_at(marginals: Sequence[Marginal], threshold: float, u_minus_d) -> bool:
    """Convexity of the constraint curve at the point: positive definiteness
    of the Hessian, checked by attempting a Cholesky factorization."""
    hess = curvature_hessian(marginals, threshold, u_minus_d)
    try:
        np.linalg.cholesky(hess)
        return True
    except np.linalg.LinAlgError:
        return False


@dataclass(frozen=True)
class LevelSchedule:
    """Increasing VaR thresholds defining the nested tail events."""

    alphas: tuple[float, ...]
    thresholds: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "thresholds", tuple(float(b) for b in self.thresholds))
        if len(self.alphas) != len(self.thresholds) or not self.alphas:
            raise ValueError("schedule needs matching, nonempty alphas/thresholds")
        if not all(0.0 < a < 1.0 for a in self.alphas):
            raise ValueError("alphas must lie in (0, 1)")
        if not all(a < b for a, b in zip(self.alphas, self.alphas[1:])):
            raise ValueError("alphas must be strictly increasing")
        if not all(a < b for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("thresholds must be strictly increasing")

    def __len__(self) -> int:
        return len(self.alphas)

    def tail_regions(self) -> list[ConstraintRegion]:
        return [ConstraintRegion("tail", b) for b in self.thresholds]

    def var_band_regions(self, epsilon: float | None = None) -> list[ConstraintRegion]:
        """Tail levels followed by a final band tightening step around the
        target threshold; epsilon defaults to 0.5% of the threshold."""
        final = self.thresholds[-1]
        eps = 0.005 * abs(final) if epsilon is None else float(epsilon)
        return self.tail_regions() + [ConstraintRegion("band", final, eps)]
