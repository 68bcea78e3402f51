"""Reference estimators: naive rejection Monte Carlo and the mixture
importance sampler over copulas conditioned on a coordinate exceedance.

The IS proposal F_V mixes the conditional laws C^[lambda] = law of U given
max_i U_i > lambda over a discrete mixing distribution that must place mass
at lambda = 0.  Its density is

    f_V(u) = sum_k p_k c(u) 1{max u > lambda_k} / (1 - C(lambda_k 1)),

so the importance weight targeting c is

    w(u) = [ sum_k p_k 1{max_i u_i > lambda_k} / (1 - C(lambda_k 1)) ]^-1,

bounded by 1/p_0.  Proposal draws are generated by rejection; the batched
path draws the rejection counter from its exact geometric law and the
accepted point from the conditional law directly (the two are independent
given lambda, so the joint distribution is unchanged).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .copulas import CopulaModel
from .estimators import AllocationReport
from .geometry import aggregate_loss
from .marginals import Marginal
from .rng import generator as _make_generator

__all__ = [
    "MixingDistribution",
    "ACHDiagnostics",
    "EstimateUnavailableError",
    "DrawCapExceededError",
    "expected_rejection_draws",
    "mc_rejection_estimate",
    "ach_sample",
    "ach_weight",
    "is_ach_estimate",
]


class DrawCapExceededError(RuntimeError):
    pass


class EstimateUnavailableError(RuntimeError):
    """No proposal landed in the conditioning event."""

    def __init__(self, diagnostics: "ACHDiagnostics"):
        super().__init__("no particle satisfied the conditioning event")
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class MixingDistribution:
    """Discrete mixing law: atoms (lambda_k, p_k), lambda in [0,1), p > 0.

    Must include an atom at 0; atoms are kept sorted and the masses
    normalized.
    """

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        atoms = sorted((float(l), float(p)) for l, p in self.atoms)
        if not atoms or atoms[0][0] != 0.0:
            raise ValueError("mixing distribution must place mass at lambda = 0")
        if any(not 0.0 <= l < 1.0 for l, _ in atoms):
            raise ValueError("atoms must lie in [0, 1)")
        if any(p <= 0.0 for _, p in atoms):
            raise ValueError("atom masses must be positive")
        if len({l for l, _ in atoms}) != len(atoms):
            raise ValueError("duplicate atoms")
        total = sum(p for _, p in atoms)
        object.__setattr__(
            self, "atoms", tuple((l, p / total) for l, p in atoms)
        )

    @classmethod
    def default_geometric(cls, n_points: int = 20) -> "MixingDistribution":
        """lambda_k = 1 - 0.5^k for k = 1..n plus the mandatory 0 atom,
        uniform masses."""
        lambdas = [0.0] + [1.0 - 0.5**k for k in range(1, n_points + 1)]
        p = 1.0 / len(lambdas)
        return cls(tuple((l, p) for l in lambdas))

    @property
    def p0(self) -> float:
        return self.atoms[0][1]

    def lambdas(self) -> np.ndarray:
        return np.array([l for l, _ in self.atoms])

    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms])


def _acceptance_probs(copula: CopulaModel, mixing: MixingDistribution) -> np.ndarray:
    """P[max_i U_i > lambda_k] = 1 - C(lambda_k 1) per atom."""
    out = np.empty(len(mixing.atoms))
    d = copula.dim
    for k, (lam, _) in enumerate(mixing.atoms):
        out[k] = 1.0 - copula.cdf(np.full(d, lam))
    return out


def expected_rejection_draws(copula: CopulaModel, mixing: MixingDistribution) -> float:
    """E[N_V] = sum_k p_k / (1 - C(lambda_k 1))."""
    return float(np.sum(mixing.probs() / _acceptance_probs(copula, mixing)))


# ---------------------------------------------------------------------------
# rejection Monte Carlo
# ---------------------------------------------------------------------------


def mc_rejection_estimate(
    copula: CopulaModel,
    marginals: Sequence[Marginal],
    threshold: float,
    n_accept: int,
    seed_or_rng: Union[int, np.random.Generator],
    alpha: float | None = None,
    draw_cap: int = 1_000_000_000,
    batch: int = 200_000,
):
    """Unweighted tail average over exactly ``n_accept`` accepted draws.

    Returns ``(report, draw_count)`` where the count is the number of
    unconditional draws up to and including the one producing the last
    acceptance.
    """
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else _make_generator(seed_or_rng)
    )
    kept: list[np.ndarray] = []
    have = 0
    draws = 0
    while have < n_accept:
        m = min(batch, draw_cap - draws)
        if m <= 0:
            raise DrawCapExceededError(f"draw cap {draw_cap} exceeded")
        u = copula.sample(m, rng)
        accept = aggregate_loss(marginals, u) > threshold
        n_new = int(accept.sum())
        if have + n_new >= n_accept:
            last = np.flatnonzero(accept)[n_accept - have - 1]
            draws += int(last) + 1
            u, accept = u[: last + 1], accept[: last + 1]
        else:
            draws += m
        kept.append(u[accept])
        have += int(accept.sum())
    points = np.concatenate(kept, axis=0)
    contributions = tuple(
        float(np.mean(marg.quantile(points[:, i], clamp=True)))
        for i, marg in enumerate(marginals)
    )
    report = AllocationReport(
        contributions=contributions,
        total=float(sum(contributions)),
        risk_measure="ES",
        alpha=alpha,
        method="mc",
    )
    return report, draws


# ---------------------------------------------------------------------------
# ACH mixture importance sampler
# ---------------------------------------------------------------------------


def ach_sample(
    copula: CopulaModel,
    mixing: MixingDistribution,
    rng: np.random.Generator,
):
    """One proposal draw by literal rejection.

    Draws lambda from the mixing law, then u ~ C until max_i u_i > lambda.
    Returns ``(u, lambda, rejection_draws)``.
    """
    lambdas, probs = mixing.lambdas(), mixing.probs()
    lam = float(lambdas[rng.choice(len(lambdas), p=probs)])
    draws = 0
    while True:
        u = copula.sample(1, rng)[0]
        draws += 1
        if np.max(u) > lam:
            return u, lam, draws


def _ach_sample_batch(
    copula: CopulaModel,
    mixing: MixingDistribution,
    n: int,
    rng: np.random.Generator,
    chunk: int = 2_000_000,
):
    """n proposal draws with exact joint law of (u, lambda, rejection_draws).

    Given lambda, the rejection counter is Geometric(1 - C(lambda 1)) and is
    independent of the accepted point, so the counter is drawn from the
    geometric law directly and the point from the conditional law by batched
    rejection.
    """
    lambdas = mixing.lambdas()
    accept_p = _acceptance_probs(copula, mixing)
    atom_idx = rng.choice(len(lambdas), size=n, p=mixing.probs())
    points = np.empty((n, copula.dim))
    counts = np.empty(n, dtype=np.int64)
    for k in range(len(lambdas)):
        rows = np.flatnonzero(atom_idx == k)
        if rows.size == 0:
            continue
        counts[rows] = rng.geometric(accept_p[k])
        need = rows.size
        got: list[np.ndarray] = []
        have = 0
        while have < need:
            m = int(min(chunk, max(2.0 * (need - have) / accept_p[k], 1024)))
            u = copula.sample(m, rng)
            u = u[np.max(u, axis=1) > lambdas[k]]
            got.append(u)
            have += u.shape[0]
        points[rows] = np.concatenate(got, axis=0)[:need]
    return points, lambdas[atom_idx], counts


def ach_weight(copula: CopulaModel, mixing: MixingDistribution, u) -> np.ndarray:
    """Importance weight(s) of proposal point(s); bounded by 1/p_0."""
    pts = np.asarray(u, dtype=float)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    mx = pts.max(axis=1)
    lambdas = mixing.lambdas()
    ratios = mixing.probs() / _acceptance_probs(copula, mixing)
    denom = ((mx[:, None] > lambdas[None, :]) * ratios[None, :]).sum(axis=1)
    out = 1.0 / denom
    return float(out[0]) if single else out


@dataclass(frozen=True)
class ACHDiagnostics:
    n_proposals: int
    n_nonzero: int  # proposals whose transformed sum clears the threshold
    mean_rejection_draws: float
    p_is: float  # n_nonzero / (mean_rejection_draws * n_proposals)
    stop_loss_estimate: float
    total_draws: int


def is_ach_estimate(
    copula: CopulaModel,
    marginals: Sequence[Marginal],
    threshold: float,
    mixing: MixingDistribution,
    n_proposal: int,
    seed_or_rng: Union[int, np.random.Generator],
    alpha: float | None = None,
):
    """Self-normalized tail estimate from the mixture IS proposal.

    Returns ``(report, diagnostics)``; raises ``EstimateUnavailableError``
    (carrying the diagnostics) when no proposal satisfies the event.
    """
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else _make_generator(seed_or_rng)
    )
    points, _, counts = _ach_sample_batch(copula, mixing, n_proposal, rng)
    weights = ach_weight(copula, mixing, points)
    sums = aggregate_loss(marginals, points)
    subset = sums > threshold
    n_tilde = int(subset.sum())
    mean_draws = float(counts.mean())
    w_all = weights / weights.sum()
    stop_loss = float(w_all @ np.maximum(sums - threshold, 0.0))
    diagnostics = ACHDiagnostics(
        n_proposals=n_proposal,
        n_nonzero=n_tilde,
        mean_rejection_draws=mean_draws,
        p_is=n_tilde / (mean_draws * n_proposal),
        stop_loss_estimate=stop_loss,
        total_draws=int(counts.sum()),
    )
    if n_tilde == 0:
        raise EstimateUnavailableError(diagnostics)
    w_sub = weights[subset]
    w_sub = w_sub / w_sub.sum()
    pts_sub = points[subset]
    contributions = tuple(
        float(w_sub @ marg.quantile(pts_sub[:, i], clamp=True))
        for i, marg in enumerate(marginals)
    )
    report = AllocationReport(
        contributions=contributions,
        total=float(sum(contributions)),
        risk_measure="ES",
        alpha=alpha,
        method="is_ach",
    )
    return report, diagnostics
