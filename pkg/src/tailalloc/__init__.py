"""Rare-event Euler capital allocation for copula-dependent loss models.

Estimates tail-conditional expectations E[X_k | sum_i X_i > VaR_alpha] with a
constrained-copula SMC sampler, benchmarked against rejection Monte Carlo and
a mixture importance sampler.
"""

from .baselines import MixingDistribution, ach_sample, ach_weight, is_ach_estimate, mc_rejection_estimate
from .config import ExperimentConfig, load_config
from .copulas import (
    ArchimedeanCopula,
    NestedArchimedeanCopula,
    copula_from_config,
    inverse_tail_dependence,
    tail_dependence_lower,
    tail_dependence_upper,
)
from .estimators import (
    AllocationReport,
    conditional_expectation,
    euler_es_allocation,
    euler_var_allocation,
    hierarchical_rollup,
    stddev_allocation,
)
from .geometry import (
    ConstraintRegion,
    LevelSchedule,
    contains_u,
    curvature_hessian,
    curve_point,
    is_convex_at,
    residual_bound,
)
from .marginals import Exponential, LogNormal, Marginal, marginal_from_config
from .quantiles import QuantileTable, build_level_schedule, estimate_quantiles
from .runner import compute_metrics, run_experiment
from .smc import (
    KernelSpec,
    ParticleSystem,
    ess,
    gibbs_move,
    resample,
    run_smc_sampler,
)

__version__ = "0.1.0"
