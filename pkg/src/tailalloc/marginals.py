"""Continuous marginal loss distributions.

Each marginal exposes the four evaluations the rest of the package needs:
cdf, quantile, density and density derivative.  All four accept scalars or
numpy arrays and are pure, so instances are safe to share across threads.

Only the Log-Normal family is required by the experiment configurations; the
Exponential family is included as a second implementation of the interface
(and because its closed forms make hand-checked test cases easy).
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "Marginal",
    "LogNormal",
    "Exponential",
    "marginal_from_config",
    "marginal_to_config",
    "marginals_from_config",
    "QUANTILE_CLAMP",
]

# Unit-cube coordinates numerically on the boundary are pulled inside by this
# amount before inversion (see Marginal.quantile with clamp=True).
QUANTILE_CLAMP = 1e-12

# Normal cdf/quantile come from scipy.special.ndtr/ndtri, the Cephes rational
# approximations (ndtri: three-range rational minimax fits, |rel. err| below
# ~1.2e-16; ndtr via erfc).  Quantile accuracy feeds the constraint geometry
# directly, which rules out the coarse Abramowitz-Stegun style fits.
_norm_cdf = ndtr
_norm_quantile = ndtri


class Marginal(ABC):
    """A continuous univariate loss distribution."""

    #: open support interval (lo, hi)
    support: tuple[float, float]

    @abstractmethod
    def cdf(self, x):
        """P[X <= x]; 0 below the support, 1 above it."""

    @abstractmethod
    def _quantile(self, p):
        """Inverse cdf for p strictly inside (0, 1)."""

    @abstractmethod
    def pdf(self, x):
        """Density; 0 outside the support."""

    @abstractmethod
    def pdf_prime(self, x):
        """Derivative of the density, for x in the support interior."""

    def quantile(self, p, *, allow_endpoints: bool = False, clamp: bool = False):
        """Inverse cdf.

        p must lie in (0, 1).  With ``allow_endpoints=True``, p of exactly 0
        or 1 maps to the support endpoints instead of raising.  With
        ``clamp=True``, p is first clipped into
        [QUANTILE_CLAMP, 1 - QUANTILE_CLAMP]; sampler coordinates can land
        numerically on the cube boundary and the clamp keeps the transform
        finite.
        """
        p = np.asarray(p, dtype=float)
        if clamp:
            p = np.clip(p, QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP)
        inside = (p > 0.0) & (p < 1.0)
        if not np.all(inside):
            at_end = (p == 0.0) | (p == 1.0)
            if not allow_endpoints or not np.all(inside | at_end):
                raise ValueError("quantile requires p in (0, 1)")
            lo, hi = self.support
            out = np.where(p == 0.0, lo, hi)
            safe = np.where(inside, p, 0.5)
            out = np.where(inside, self._quantile(safe), out)
            return out if out.ndim else float(out)
        out = self._quantile(p)
        return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class LogNormal(Marginal):
    """Log-Normal loss: ln X ~ N(mu, sigma^2), sigma > 0."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValueError("LogNormal requires sigma > 0")

    @property
    def support(self) -> tuple[float, float]:
        return (0.0, np.inf)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        pos = x > 0.0
        z = np.where(pos, np.log(np.where(pos, x, 1.0)), 0.0)
        out = np.where(pos, _norm_cdf((z - self.mu) / self.sigma), 0.0)
        return out if out.ndim else float(out)

    def _quantile(self, p):
        return np.exp(self.mu + self.sigma * _norm_quantile(p))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        pos = x > 0.0
        xs = np.where(pos, x, 1.0)
        z = (np.log(xs) - self.mu) / self.sigma
        out = np.where(
            pos,
            np.exp(-0.5 * z * z) / (xs * self.sigma * np.sqrt(2.0 * np.pi)),
            0.0,
        )
        return out if out.ndim else float(out)

    def pdf_prime(self, x):
        # f'(x) = -f(x)/x * (1 + (ln x - mu)/sigma^2)
        x = np.asarray(x, dtype=float)
        pos = x > 0.0
        xs = np.where(pos, x, 1.0)
        z = (np.log(xs) - self.mu) / self.sigma**2
        out = np.where(pos, -self.pdf(xs) / xs * (1.0 + z), 0.0)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class Exponential(Marginal):
    """Exponential loss with rate > 0."""

    rate: float = 1.0

    def __post_init__(self):
        if not self.rate > 0.0:
            raise ValueError("Exponential requires rate > 0")

    @property
    def support(self) -> tuple[float, float]:
        return (0.0, np.inf)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x > 0.0, -np.expm1(-self.rate * np.maximum(x, 0.0)), 0.0)
        return out if out.ndim else float(out)

    def _quantile(self, p):
        return -np.log1p(-p) / self.rate

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x > 0.0, self.rate * np.exp(-self.rate * np.maximum(x, 0.0)), 0.0)
        return out if out.ndim else float(out)

    def pdf_prime(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x > 0.0, -self.rate * self.pdf(x), 0.0)
        return out if out.ndim else float(out)


_FAMILIES = {"lognormal": LogNormal, "exponential": Exponential}


def marginal_to_config(marginal: Marginal) -> dict:
    if isinstance(marginal, LogNormal):
        return {"family": "lognormal", "mu": marginal.mu, "sigma": marginal.sigma}
    if isinstance(marginal, Exponential):
        return {"family": "exponential", "rate": marginal.rate}
    raise ValueError(f"cannot serialize marginal {marginal!r}")


def marginal_from_config(cfg: Mapping) -> Marginal:
    """Build a marginal from ``{"family": "lognormal", "mu": .., "sigma": ..}``."""
    cfg = dict(cfg)
    family = str(cfg.pop("family", "")).lower()
    if family not in _FAMILIES:
        raise ValueError(f"unknown marginal family {family!r}")
    try:
        return _FAMILIES[family](**cfg)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {family}: {exc}") from exc


def marginals_from_config(cfgs: Sequence[Mapping]) -> list[Marginal]:
    return [marginal_from_config(c) for c in cfgs]
