"""Constrained-copula SMC sampler.

Targets the sequence pi_t(u) proportional to c(u) 1{u in region_t} over a
schedule of shrinking regions.  The mutation kernel is a mixture over which
coordinate m is drawn last: the d-1 free coordinates move independently
(fresh uniforms, or a Beta law fitted to the previous population), then
coordinate m is drawn uniformly on its feasible interval, so every proposal
lands inside the next region by construction.

Both built kernels are independent of the individual previous particle (the
Beta variant adapts to the previous *population*), so the approximated
optimal backward kernel collapses the incremental weight to

    w_t(u) = c(u) 1{u in region_t} / K_t(u),

an O(N) update; ``weight_update_general`` keeps the O(N^2) population-mixture
denominator for kernels that do depend on the previous particle.

The printed one-dimensional kernel factors in the source material are not
densities (they integrate to u^2/2-type quantities); the proper uniform
densities 1/(hi - lo) and 1 are used here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
from scipy.special import betaln, logsumexp

from .copulas import CopulaModel
from .geometry import ConstraintRegion, LevelSchedule, aggregate_loss, coordinate_bounds
from .marginals import Marginal, QUANTILE_CLAMP
from .rng import generator as _make_generator

__all__ = [
    "LevelFailureError",
    "ParticleSystem",
    "KernelSpec",
    "FittedKernel",
    "ess",
    "resample",
    "resample_indices",
    "fit_global_beta",
    "fit_kernel",
    "mutate",
    "kernel_log_density",
    "weight_update",
    "weight_update_general",
    "gibbs_move",
    "run_smc_sampler",
]


class LevelFailureError(RuntimeError):
    """Raised when a level kills every particle (schedule too aggressive)."""

    def __init__(self, level: int, message: str | None = None):
        super().__init__(message or f"all particles died at level {level}")
        self.level = level


@dataclass
class ParticleSystem:
    """N weighted points on the unit cube at one schedule level.

    ``level`` is the 0-based index into the region schedule; ``rng_key`` is
    the substream key that generated the level (see ``tailalloc.rng``).
    """

    points: np.ndarray
    weights: np.ndarray
    level: int
    rng_key: tuple = ()

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.points.ndim != 2 or self.weights.shape != (self.points.shape[0],):
            raise ValueError("points must be (n, d) with matching weights")
        if np.any(self.weights < 0.0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be normalized")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def ess(self) -> float:
        return ess(self.weights)


def ess(weights) -> float:
    """Effective sample size [sum w^2]^-1 of normalized weights."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0.0:
        raise ValueError("all weights are zero: total particle death")
    w = w / total
    return float(1.0 / np.sum(w * w))


def resample_indices(weights, scheme: str, rng: np.random.Generator) -> np.ndarray:
    """Ancestor indices with the stated marginal probabilities."""
    w = np.asarray(weights, dtype=float)
    n = w.size
    cdf = np.cumsum(w)
    cdf[-1] = 1.0  # guard cumsum roundoff
    if scheme == "multinomial":
        draws = rng.random(n)
    elif scheme == "systematic":
        draws = (np.arange(n) + rng.random()) / n
    else:
        raise ValueError("scheme must be 'multinomial' or 'systematic'")
    return np.minimum(np.searchsorted(cdf, draws, side="right"), n - 1)


def resample(system: ParticleSystem, scheme: str, rng: np.random.Generator) -> ParticleSystem:
    """Resampled system with equal weights 1/N."""
    idx = resample_indices(system.weights, scheme, rng)
    n = system.n
    return ParticleSystem(
        system.points[idx].copy(), np.full(n, 1.0 / n), system.level, system.rng_key
    )


# ---------------------------------------------------------------------------
# mutation kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelSpec:
    """Mutation kernel family and the clamps used when fitting it.

    ``uniform``: free coordinates are fresh Uniform(0,1) draws.
    ``global_beta``: free coordinates are Beta draws moment-matched per
    dimension to the previous weighted population.
    """

    kind: str = "global_beta"
    min_variance: float = 1e-6
    mean_margin: float = 1e-4
    param_floor: float = 0.1
    param_cap: float = 1e4

    def __post_init__(self):
        if self.kind not in ("uniform", "global_beta"):
            raise ValueError("kernel kind must be 'uniform' or 'global_beta'")
        if self.min_variance <= 0.0 or self.mean_margin <= 0.0:
            raise ValueError("kernel clamps must be positive")


@dataclass(frozen=True)
class FittedKernel:
    spec: KernelSpec
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None


def fit_global_beta(points: np.ndarray, weights: np.ndarray, spec: KernelSpec):
    """Per-dimension Beta(alpha, beta) solving the two moment equations.

    With weighted mean mu and variance s2 (floored at ``min_variance``, mean
    clamped into [mean_margin, 1 - mean_margin]):

        alpha = mu (mu (1 - mu) / s2 - 1),   beta = alpha (1/mu - 1),

    then both parameters are clipped into [param_floor, param_cap].  The
    clamps absorb degenerate populations (collapsed spread at deep levels).
    """
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    mu = w @ points
    s2 = w @ (points**2) - mu**2
    s2 = np.maximum(s2, spec.min_variance)
    mu = np.clip(mu, spec.mean_margin, 1.0 - spec.mean_margin)
    alpha = mu * (mu * (1.0 - mu) / s2 - 1.0)
    beta = alpha * (1.0 / mu - 1.0)
    alpha = np.clip(alpha, spec.param_floor, spec.param_cap)
    beta = np.clip(beta, spec.param_floor, spec.param_cap)
    return alpha, beta


def fit_kernel(spec: KernelSpec, system: ParticleSystem) -> FittedKernel:
    if spec.kind == "uniform":
        return FittedKernel(spec)
    alpha, beta = fit_global_beta(system.points, system.weights, spec)
    return FittedKernel(spec, alpha, beta)


def _draw_free(kernel: FittedKernel, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    # the column that will carry the constrained coordinate is drawn too and
    # overwritten; the discarded draw is independent of everything else
    if kernel.spec.kind == "uniform":
        return rng.random((n, d))
    return rng.beta(kernel.alpha[None, :], kernel.beta[None, :], size=(n, d))


def _free_base_log_pdf(kernel: FittedKernel, points: np.ndarray) -> np.ndarray:
    if kernel.spec.kind == "uniform":
        return np.zeros_like(points)
    u = np.clip(points, QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP)
    a, b = kernel.alpha[None, :], kernel.beta[None, :]
    return (a - 1.0) * np.log(u) + (b - 1.0) * np.log1p(-u) - betaln(a, b)


def _quantile_matrix(marginals: Sequence[Marginal], points: np.ndarray) -> np.ndarray:
    out = np.empty_like(points)
    for i, marginal in enumerate(marginals):
        out[:, i] = marginal.quantile(points[:, i], clamp=True)
    return out


def _bounds_by_coordinate(
    region: ConstraintRegion,
    marginals: Sequence[Marginal],
    others_sum: np.ndarray,
    m_idx: np.ndarray,
):
    """Feasible (lo, hi) per particle when particle j constrains coordinate
    m_idx[j]; vectorized by grouping on the coordinate."""
    lo = np.empty_like(others_sum)
    hi = np.empty_like(others_sum)
    for m in range(len(marginals)):
        mask = m_idx == m
        if np.any(mask):
            l, h = coordinate_bounds(region, marginals, others_sum[mask], m)
            lo[mask] = l
            hi[mask] = h
    return lo, hi


def mutate(
    system: ParticleSystem,
    kernel: FittedKernel,
    region: ConstraintRegion,
    marginals: Sequence[Marginal],
    rng: np.random.Generator,
    retry_cap: int = 100,
):
    """Propose N points inside ``region``.

    Per particle: pick the constrained coordinate m uniformly, draw the d-1
    free coordinates from the kernel base law, then draw coordinate m
    uniformly on its feasible interval.  When the free coordinates leave no
    feasible interval (bound numerically at 1, or an empty band slot) they
    are redrawn up to ``retry_cap`` times, after which the particle is
    flagged dead; dead particles keep their previous position and are zeroed
    by the weight update.

    Returns ``(points, dead)``.
    """
    n, d = system.points.shape
    points = system.points.copy()
    dead = np.zeros(n, dtype=bool)
    m_all = rng.integers(0, d, size=n)
    pending = np.arange(n)
    for _ in range(retry_cap + 1):
        if pending.size == 0:
            break
        k = pending.size
        m = m_all[pending]
        free = _draw_free(kernel, k, d, rng)
        x = _quantile_matrix(marginals, free)
        others = x.sum(axis=1) - x[np.arange(k), m]
        lo, hi = _bounds_by_coordinate(region, marginals, others, m)
        u_m = lo + rng.random(k) * (hi - lo)
        feasible = (hi - lo) > 0.0
        proposal = free
        proposal[np.arange(k), m] = u_m
        ok = pending[feasible]
        points[ok] = proposal[feasible]
        pending = pending[~feasible]
    dead[pending] = True
    return points, dead


def kernel_log_density(
    kernel: FittedKernel,
    region: ConstraintRegion,
    marginals: Sequence[Marginal],
    points: np.ndarray,
) -> np.ndarray:
    """Log density of the mixture mutation kernel at ``points``.

    (1/d) sum_m [prod_{i != m} base_i(u_i)] * 1{u_m feasible} / (hi_m - lo_m)
    with the feasible interval of coordinate m computed from the point's
    other coordinates.  Independent of the previous particle for both built
    kernels.
    """
    n, d = points.shape
    base = _free_base_log_pdf(kernel, points)
    base_total = base.sum(axis=1)
    x = _quantile_matrix(marginals, points)
    row_sums = x.sum(axis=1)
    terms = np.empty((n, d))
    for m in range(d):
        lo, hi = coordinate_bounds(region, marginals, row_sums - x[:, m], m)
        width = hi - lo
        inside = (points[:, m] >= lo) & (points[:, m] <= hi) & (width > 0.0)
        with np.errstate(divide="ignore"):
            log_width = np.where(inside, -np.log(np.where(width > 0.0, width, 1.0)), -np.inf)
        terms[:, m] = base_total - base[:, m] + log_width
    return logsumexp(terms, axis=1) - np.log(d)


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


def _normalize_log_weights(log_w: np.ndarray, level: int) -> np.ndarray:
    norm = logsumexp(log_w)
    if not np.isfinite(norm):
        raise LevelFailureError(level)
    w = np.exp(log_w - norm)
    return w / w.sum()


def _target_log_density(
    copula: CopulaModel,
    region: ConstraintRegion,
    marginals: Sequence[Marginal],
    points: np.ndarray,
) -> np.ndarray:
    """log f_t = log c(u) on the region, -inf off it."""
    sums = aggregate_loss(marginals, points)
    inside = region.contains_sums(sums)
    clipped = np.clip(points, QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP)
    log_c = copula.log_density(clipped)
    return np.where(inside, log_c, -np.inf)


def weight_update(
    copula: CopulaModel,
    region: ConstraintRegion,
    marginals: Sequence[Marginal],
    points: np.ndarray,
    kernel_log_dens: np.ndarray,
    dead: np.ndarray | None = None,
    level: int = -1,
) -> np.ndarray:
    """Normalized weights f_t(u) / K_t(u) for particle-independent kernels."""
    log_w = _target_log_density(copula, region, marginals, points) - kernel_log_dens
    if dead is not None:
        log_w = np.where(dead, -np.inf, log_w)
    return _normalize_log_weights(log_w, level)


def weight_update_general(
    copula: CopulaModel,
    region: ConstraintRegion,
    marginals: Sequence[Marginal],
    prev_points: np.ndarray,
    prev_weights: np.ndarray,
    points: np.ndarray,
    pair_log_density: Callable[[np.ndarray, np.ndarray], np.ndarray],
    dead: np.ndarray | None = None,
    level: int = -1,
) -> np.ndarray:
    """O(N^2) update with the population-mixture denominator
    sum_k W_{t-1}^{(k)} K_t(u_{t-1}^{(k)}, u_t^{(j)}), for kernels whose
    density depends on the previous particle.

    ``pair_log_density(prev_points, points)`` must return the (N_prev, N)
    matrix of log K_t values.
    """
    log_k = pair_log_density(prev_points, points)
    log_w_prev = np.log(np.maximum(prev_weights, 1e-300))[:, None]
    denom = logsumexp(log_w_prev + log_k, axis=0)
    log_w = _target_log_density(copula, region, marginals, points) - denom
    if dead is not None:
        log_w = np.where(dead, -np.inf, log_w)
    return _normalize_log_weights(log_w, level)


# ---------------------------------------------------------------------------
# Gibbs move (univariate slice sampling per coordinate)
# ---------------------------------------------------------------------------


def gibbs_move(
    points: np.ndarray,
    copula: CopulaModel,
    region: ConstraintRegion,
    marginals: Sequence[Marginal],
    rng: np.random.Generator,
    sweeps: int = 1,
    max_shrink: int = 100,
) -> np.ndarray:
    """Full Gibbs sweeps leaving c(u) restricted to ``region`` invariant.

    Each coordinate's full conditional (proportional to the joint copula
    density on the coordinate's feasible interval) is sampled with a
    univariate slice sampler: the initial bracket is the whole interval (no
    stepping-out needed on a bounded support), rejected proposals shrink the
    bracket toward the current value, and exceeding ``max_shrink`` iterations
    leaves the coordinate unchanged (a null move preserves invariance).
    """
    pts = np.asarray(points, dtype=float).copy()
    n, d = pts.shape

    def joint_log_density(q: np.ndarray) -> np.ndarray:
        clipped = np.clip(q, QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP)
        return copula.log_density(clipped)

    for _ in range(sweeps):
        for m in range(d):
            x = _quantile_matrix(marginals, pts)
            others = x.sum(axis=1) - x[:, m]
            lo, hi = coordinate_bounds(region, marginals, others, m)
            current = pts[:, m].copy()
            level = joint_log_density(pts) + np.log(rng.random(n))
            b_lo, b_hi = lo.copy(), hi.copy()
            pending = np.arange(n)
            for _ in range(max_shrink):
                if pending.size == 0:
                    break
                prop = b_lo[pending] + rng.random(pending.size) * (
                    b_hi[pending] - b_lo[pending]
                )
                trial = pts[pending].copy()
                trial[:, m] = prop
                accept = joint_log_density(trial) >= level[pending]
                pts[pending[accept], m] = prop[accept]
                rej_idx = pending[~accept]
                rej_prop = prop[~accept]
                left = rej_prop < current[rej_idx]
                b_lo[rej_idx[left]] = rej_prop[left]
                b_hi[rej_idx[~left]] = rej_prop[~left]
                pending = rej_idx
            # particles still pending keep their current coordinate
    return pts


# ---------------------------------------------------------------------------
# the sampler
# ---------------------------------------------------------------------------


def _rejection_init(
    copula: CopulaModel,
    marginals: Sequence[Marginal],
    region: ConstraintRegion,
    n: int,
    rng: np.random.Generator,
    max_draws: int = 100_000_000,
) -> np.ndarray:
    collected: list[np.ndarray] = []
    have = 0
    drawn = 0
    batch = max(4 * n, 8192)
    while have < n:
        if drawn >= max_draws:
            raise LevelFailureError(0, "rejection initialization exhausted its draw budget")
        u = copula.sample(batch, rng)
        drawn += batch
        keep = region.contains_sums(aggregate_loss(marginals, u))
        accepted = u[keep]
        collected.append(accepted)
        have += accepted.shape[0]
    return np.concatenate(collected, axis=0)[:n]


def run_smc_sampler(
    copula: CopulaModel,
    marginals: Sequence[Marginal],
    schedule: Union[LevelSchedule, Sequence[ConstraintRegion]],
    n_particles: int,
    kernel_spec: KernelSpec = KernelSpec(),
    *,
    move_sweeps: int = 1,
    ess_threshold: float = 0.5,
    resample_scheme: str = "multinomial",
    seed: int = 0,
    seed_key: tuple = (),
    retry_cap: int = 100,
) -> list[ParticleSystem]:
    """Run the constrained-copula SMC sampler over a region schedule.

    Level 0 is initialized by rejection from the unconditional copula (the
    first region is mild); each later level mutates, reweights, and performs
    a resample-move when ESS drops below ``ess_threshold * N``.  Setting
    ``ess_threshold=0`` disables resampling, degenerating the sampler to
    per-level importance sampling.

    Deterministic given ``seed``: level t draws from the substream
    ``(seed, *seed_key, t)``.

    Returns one ParticleSystem per level (post resample-move where applied).
    """
    if n_particles < 2:
        raise ValueError("need at least 2 particles")
    regions = schedule.tail_regions() if isinstance(schedule, LevelSchedule) else list(schedule)
    if not regions:
        raise ValueError("empty schedule")
    if len(marginals) != _copula_dim(copula):
        raise ValueError("marginals and copula dimension mismatch")

    rng0 = _make_generator(seed, *seed_key, 0)
    points = _rejection_init(copula, marginals, regions[0], n_particles, rng0)
    system = ParticleSystem(
        points, np.full(n_particles, 1.0 / n_particles), 0, (seed, *seed_key, 0)
    )
    systems = [system]

    for t in range(1, len(regions)):
        rng = _make_generator(seed, *seed_key, t)
        region = regions[t]
        kernel = fit_kernel(kernel_spec, systems[-1])
        proposals, dead = mutate(systems[-1], kernel, region, marginals, rng, retry_cap)
        log_k = kernel_log_density(kernel, region, marginals, proposals)
        weights = weight_update(copula, region, marginals, proposals, log_k, dead, level=t)
        system = ParticleSystem(proposals, weights, t, (seed, *seed_key, t))
        if system.ess() < ess_threshold * n_particles:
            system = resample(system, resample_scheme, rng)
            moved = gibbs_move(
                system.points, copula, region, marginals, rng, sweeps=move_sweeps
            )
            system = ParticleSystem(
                moved, np.full(n_particles, 1.0 / n_particles), t, (seed, *seed_key, t)
            )
        systems.append(system)
    return systems


def _copula_dim(copula: CopulaModel) -> int:
    return copula.dim
