"""Archimedean and nested (hierarchical) Archimedean copulas.

Provides, for the Clayton, Gumbel and Frank families:

* generator evaluations psi, psi^{-1}, psi' and log|psi^{(d)}|,
* exact joint cdf and log-density for flat models,
* exact log-density for two-level nested trees (recursive differentiation of
  the composed generator via partial Bell polynomials), with a mixed
  finite-difference fallback for other tree shapes,
* rejection-free sampling via the Marshall-Olkin frailty construction
  (positive stable frailties by the Chambers-Mallows-Stuck transformation;
  inner Clayton frailties by Hofert's fast-rejection algorithm for
  exponentially tilted stable laws),
* the multivariate tail-dependence coefficients and their numerical
  inversion.

Gumbel generator derivatives use the standard expansion
``psi^{(d)}(t) = (-1)^d psi(t) t^{-d} sum_k a_dk t^{k/theta}`` whose
coefficients come from Stirling numbers and are computed once per (d, theta);
Frank derivatives use the polylogarithm closed form with Eulerian numbers.
"""

from __future__ import annotations

import itertools
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from math import comb
from typing import Mapping, Union

import numpy as np
from scipy.special import logsumexp

from .rng import generator as _make_generator

__all__ = [
    "ArchimedeanGenerator",
    "ClaytonGenerator",
    "GumbelGenerator",
    "FrankGenerator",
    "ArchimedeanCopula",
    "NestedArchimedeanCopula",
    "generator_from_family",
    "copula_from_config",
    "copula_to_config",
    "positive_stable",
    "tilted_stable",
    "tail_dependence_lower",
    "tail_dependence_upper",
    "inverse_tail_dependence",
]

_TINY = 1e-300


# ---------------------------------------------------------------------------
# combinatorial tables (cached per dimension)
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _stirling_first_signed(n: int) -> tuple[tuple[int, ...], ...]:
    """Signed Stirling numbers of the first kind s(i, j), i, j = 0..n."""
    s = [[0] * (n + 1) for _ in range(n + 1)]
    s[0][0] = 1
    for i in range(1, n + 1):
        for j in range(1, i + 1):
            s[i][j] = s[i - 1][j - 1] - (i - 1) * s[i - 1][j]
    return tuple(tuple(row) for row in s)


@lru_cache(maxsize=None)
def _stirling_second(n: int) -> tuple[tuple[int, ...], ...]:
    """Stirling numbers of the second kind S(i, j), i, j = 0..n."""
    S = [[0] * (n + 1) for _ in range(n + 1)]
    S[0][0] = 1
    for i in range(1, n + 1):
        for j in range(1, i + 1):
            S[i][j] = j * S[i - 1][j] + S[i - 1][j - 1]
    return tuple(tuple(row) for row in S)


@lru_cache(maxsize=None)
def _eulerian(n: int) -> tuple[int, ...]:
    """Eulerian numbers A(n, 0..n-1) (A(0, .) treated as (1,))."""
    if n == 0:
        return (1,)
    prev = _eulerian(n - 1)
    out = []
    for k in range(n):
        left = (k + 1) * (prev[k] if k < len(prev) else 0)
        right = (n - k) * (prev[k - 1] if 0 <= k - 1 < len(prev) else 0)
        out.append(left + right)
    return tuple(out)


@lru_cache(maxsize=None)
def _gumbel_deriv_coeffs(d: int, theta: float) -> tuple[float, ...]:
    """Coefficients a_dk >= 0 with
    psi^{(d)}(t) = (-1)^d psi(t) t^{-d} sum_{k=1}^d a_dk t^{k/theta}.

    a_dk = (-1)^{d-k} sum_{j=k}^d theta^{-j} s(d, j) S(j, k).
    """
    alpha = 1.0 / theta
    s1 = _stirling_first_signed(d)
    s2 = _stirling_second(d)
    coeffs = []
    for k in range(1, d + 1):
        total = sum(alpha**j * s1[d][j] * s2[j][k] for j in range(k, d + 1))
        coeffs.append((-1.0) ** (d - k) * total)
    return tuple(coeffs)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


class ArchimedeanGenerator(ABC):
    """Archimedean generator psi: decreasing from psi(0)=1 to 0."""

    family: str
    theta: float

    @abstractmethod
    def psi(self, t):
        ...

    @abstractmethod
    def psi_inv(self, u):
        ...

    @abstractmethod
    def psi_prime(self, t):
        ...

    @abstractmethod
    def log_abs_deriv(self, t, d: int):
        """log |psi^{(d)}(t)| for t > 0."""

    @abstractmethod
    def log_abs_psi_inv_prime(self, u):
        """log |(psi^{-1})'(u)| for u in (0, 1)."""

    def frailty(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Positive mixing variable V with Laplace transform psi."""
        raise NotImplementedError(f"no frailty sampler for the {self.family} family")


@dataclass(frozen=True)
class ClaytonGenerator(ArchimedeanGenerator):
    """psi(t) = (1 + t)^(-1/theta), theta > 0."""

    theta: float
    family = "clayton"

    def __post_init__(self):
        if not self.theta > 0.0:
            raise ValueError("Clayton requires theta > 0")

    def psi(self, t):
        return (1.0 + np.asarray(t, dtype=float)) ** (-1.0 / self.theta)

    def psi_inv(self, u):
        with np.errstate(divide="ignore", over="ignore"):
            return np.asarray(u, dtype=float) ** (-self.theta) - 1.0

    def psi_prime(self, t):
        it = 1.0 / self.theta
        return -it * (1.0 + np.asarray(t, dtype=float)) ** (-it - 1.0)

    def log_abs_deriv(self, t, d: int):
        # |psi^{(d)}(t)| = (1+t)^(-1/theta-d) * prod_{k=0}^{d-1} (1/theta + k)
        it = 1.0 / self.theta
        const = sum(np.log(it + k) for k in range(d))
        return const - (it + d) * np.log1p(np.asarray(t, dtype=float))

    def log_abs_psi_inv_prime(self, u):
        # (psi^{-1})'(u) = -theta u^(-theta-1)
        return np.log(self.theta) - (self.theta + 1.0) * np.log(np.asarray(u, dtype=float))

    def frailty(self, n: int, rng: np.random.Generator) -> np.ndarray:
        # Gamma(1/theta, 1): Laplace transform (1+t)^(-1/theta).
        return np.maximum(rng.gamma(1.0 / self.theta, 1.0, size=n), _TINY)


@dataclass(frozen=True)
class GumbelGenerator(ArchimedeanGenerator):
    """psi(t) = exp(-t^(1/theta)), theta >= 1."""

    theta: float
    family = "gumbel"

    def __post_init__(self):
        if not self.theta >= 1.0:
            raise ValueError("Gumbel requires theta >= 1")

    def psi(self, t):
        return np.exp(-np.asarray(t, dtype=float) ** (1.0 / self.theta))

    def psi_inv(self, u):
        with np.errstate(divide="ignore", over="ignore"):
            return (-np.log(np.asarray(u, dtype=float))) ** self.theta

    def psi_prime(self, t):
        a = 1.0 / self.theta
        t = np.asarray(t, dtype=float)
        return -a * t ** (a - 1.0) * np.exp(-(t**a))

    def log_abs_deriv(self, t, d: int):
        a = 1.0 / self.theta
        t = np.asarray(t, dtype=float)
        logt = np.log(t)
        coeffs = _gumbel_deriv_coeffs(d, self.theta)
        terms = np.stack(
            [np.log(max(c, _TINY)) + k * a * logt for k, c in enumerate(coeffs, start=1)]
        )
        return -(t**a) - d * logt + logsumexp(terms, axis=0)

    def log_abs_psi_inv_prime(self, u):
        # (psi^{-1})'(u) = -theta (-ln u)^(theta-1) / u
        u = np.asarray(u, dtype=float)
        return np.log(self.theta) + (self.theta - 1.0) * np.log(-np.log(u)) - np.log(u)

    def frailty(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.theta == 1.0:
            return np.ones(n)
        return positive_stable(1.0 / self.theta, n, rng)


@dataclass(frozen=True)
class FrankGenerator(ArchimedeanGenerator):
    """psi(t) = -ln(1 - (1 - e^-theta) e^-t) / theta, theta != 0.

    Only the cdf/density side is implemented; no sampler is provided for
    this family.
    """

    theta: float
    family = "frank"

    def __post_init__(self):
        if self.theta == 0.0:
            raise ValueError("Frank requires theta != 0")

    @property
    def _g(self) -> float:
        return -np.expm1(-self.theta)

    def psi(self, t):
        x = self._g * np.exp(-np.asarray(t, dtype=float))
        return -np.log1p(-x) / self.theta

    def psi_inv(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            return -np.log(np.expm1(-self.theta * u) / np.expm1(-self.theta))

    def psi_prime(self, t):
        x = self._g * np.exp(-np.asarray(t, dtype=float))
        return -(1.0 / self.theta) * x / (1.0 - x)

    def log_abs_deriv(self, t, d: int):
        # psi^{(d)}(t) = (-1)^d Li_{-(d-1)}(g e^-t) / theta with the
        # polylogarithm in Eulerian-number closed form.
        x = self._g * np.exp(-np.asarray(t, dtype=float))
        n = d - 1
        eul = _eulerian(n) if n >= 1 else (1,)
        poly = np.zeros_like(x)
        for k in range(len(eul) if n >= 1 else 1):
            poly = poly + eul[k] * x**k
        with np.errstate(divide="ignore"):
            return (
                -np.log(abs(self.theta))
                + np.log(np.abs(x))
                + np.log(np.maximum(np.abs(poly), _TINY))
                - d * np.log(np.abs(1.0 - x))
            )

    def log_abs_psi_inv_prime(self, u):
        # (psi^{-1})'(u) = theta e^{-theta u} / (e^{-theta u} - 1)
        u = np.asarray(u, dtype=float)
        return (
            np.log(abs(self.theta))
            - self.theta * u
            - np.log(np.abs(np.expm1(-self.theta * u)))
        )


_GENERATORS = {
    "clayton": ClaytonGenerator,
    "gumbel": GumbelGenerator,
    "frank": FrankGenerator,
}


def generator_from_family(family: str, theta: float) -> ArchimedeanGenerator:
    family = family.lower()
    if family not in _GENERATORS:
        raise ValueError(f"unknown Archimedean family {family!r}")
    return _GENERATORS[family](theta)


# ---------------------------------------------------------------------------
# stable-law samplers used by the frailty constructions
# ---------------------------------------------------------------------------


def positive_stable(alpha: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Positive alpha-stable draws with Laplace transform exp(-t^alpha).

    Chambers-Mallows-Stuck transformation specialized to the totally skewed
    positive case (equivalently Kanter's representation): with
    theta ~ U(0, pi) and W ~ Exp(1),

        V = sin(alpha theta) sin(theta)^(-1/alpha)
            * (sin((1-alpha) theta) / W)^((1-alpha)/alpha).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("positive_stable requires alpha in (0, 1)")
    theta = np.clip(rng.uniform(0.0, np.pi, size=n), 1e-12, np.pi - 1e-12)
    w = np.maximum(rng.standard_exponential(n), _TINY)
    ratio = (1.0 - alpha) / alpha
    return (
        np.sin(alpha * theta)
        * np.sin(theta) ** (-1.0 / alpha)
        * (np.sin((1.0 - alpha) * theta) / w) ** ratio
    )


def tilted_stable(alpha: float, scale: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Exponentially tilted stable draws, one per entry of ``scale``.

    Returns V with Laplace transform exp(-v ((1+t)^alpha - 1)) for v =
    scale[i].  Uses Hofert's fast-rejection scheme: split v into
    m = ceil(v) i.i.d. pieces (the law is infinitely divisible), sample each
    piece as a rescaled positive stable draw S accepted with probability
    exp(-S), so every piece accepts with probability at least e^-1.
    """
    scale = np.asarray(scale, dtype=float)
    m = np.maximum(np.ceil(scale), 1.0).astype(np.int64)
    lam = np.repeat(scale / m, m)  # piece rates, all <= 1
    piece_of = np.repeat(np.arange(scale.size), m)
    samples = np.empty(lam.size)
    pending = np.arange(lam.size)
    factor = lam ** (1.0 / alpha)
    while pending.size:
        cand = factor[pending] * positive_stable(alpha, pending.size, rng)
        accept = rng.random(pending.size) < np.exp(-cand)
        samples[pending[accept]] = cand[accept]
        pending = pending[~accept]
    return np.bincount(piece_of, weights=samples, minlength=scale.size)


# ---------------------------------------------------------------------------
# flat Archimedean copula
# ---------------------------------------------------------------------------


def _as_points(u, dim: int) -> tuple[np.ndarray, bool]:
    """Coerce u to an (n, dim) array; returns (points, was_single_point)."""
    arr = np.asarray(u, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ValueError(f"expected a point of dimension {dim}, got {arr.shape[0]}")
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {arr.shape}")
    return arr, False


def _require_interior(points: np.ndarray) -> None:
    if np.any(points <= 0.0) or np.any(points >= 1.0):
        raise ValueError("density requires u strictly inside (0, 1)^d")


@dataclass(frozen=True)
class ArchimedeanCopula:
    """Exchangeable Archimedean copula psi(sum_i psi^{-1}(u_i))."""

    generator: ArchimedeanGenerator
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    def cdf(self, u):
        pts, single = _as_points(u, self.dim)
        if np.any(pts < 0.0) or np.any(pts > 1.0):
            raise ValueError("cdf requires u in [0, 1]^d")
        s = self.generator.psi_inv(pts).sum(axis=1)
        out = np.where(np.isinf(s), 0.0, self.generator.psi(np.where(np.isinf(s), 0.0, s)))
        return float(out[0]) if single else out

    def log_density(self, u):
        pts, single = _as_points(u, self.dim)
        _require_interior(pts)
        gen = self.generator
        s = gen.psi_inv(pts).sum(axis=1)
        out = gen.log_abs_deriv(s, self.dim) + gen.log_abs_psi_inv_prime(pts).sum(axis=1)
        return float(out[0]) if single else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        v = self.generator.frailty(n, rng)
        e = rng.standard_exponential((n, self.dim))
        return self.generator.psi(e / v[:, None])


# ---------------------------------------------------------------------------
# nested (hierarchical) Archimedean copula
# ---------------------------------------------------------------------------

Child = Union[int, "NestedArchimedeanCopula"]


@dataclass(frozen=True)
class NestedArchimedeanCopula:
    """Tree of Archimedean nodes; integer children are leaf coordinates.

    All nodes must share one family and parameters must not decrease from
    parent to child (sufficient nesting condition for Clayton/Gumbel).
    """

    generator: ArchimedeanGenerator
    children: tuple[Child, ...]

    def __post_init__(self):
        if len(self.children) < 1:
            raise ValueError("nested copula node needs at least one child")
        for child in self.children:
            if isinstance(child, NestedArchimedeanCopula):
                if child.generator.family != self.generator.family:
                    raise ValueError("nested children must share the parent family")
                if child.generator.theta < self.generator.theta - 1e-12:
                    raise ValueError("child theta must be >= parent theta")
        leaves = self.leaves()
        if len(set(leaves)) != len(leaves):
            raise ValueError("leaf coordinates must be distinct")

    def leaves(self) -> tuple[int, ...]:
        out: list[int] = []
        for child in self.children:
            if isinstance(child, NestedArchimedeanCopula):
                out.extend(child.leaves())
            else:
                out.append(int(child))
        return tuple(out)

    def leaf_groups(self) -> tuple[tuple[int, ...], ...]:
        """Leaf coordinates gathered per top-level child (business units)."""
        groups = []
        for child in self.children:
            if isinstance(child, NestedArchimedeanCopula):
                groups.append(tuple(sorted(child.leaves())))
            else:
                groups.append((int(child),))
        return tuple(groups)

    @property
    def dim(self) -> int:
        return len(self.leaves())

    def validate_root(self) -> None:
        """The whole tree's leaves must be exactly {0, ..., dim-1}."""
        if tuple(sorted(self.leaves())) != tuple(range(self.dim)):
            raise ValueError("leaf indices must partition 0..d-1")

    # -- cdf ----------------------------------------------------------------

    def cdf(self, u):
        pts, single = _as_points(u, self.dim)
        if np.any(pts < 0.0) or np.any(pts > 1.0):
            raise ValueError("cdf requires u in [0, 1]^d")
        out = self._node_cdf(pts)
        return float(out[0]) if single else out

    def _node_cdf(self, pts: np.ndarray) -> np.ndarray:
        gen = self.generator
        s = np.zeros(pts.shape[0])
        for child in self.children:
            if isinstance(child, NestedArchimedeanCopula):
                val = child._node_cdf(pts)
            else:
                val = pts[:, int(child)]
            s = s + gen.psi_inv(val)
        return np.where(np.isinf(s), 0.0, gen.psi(np.where(np.isinf(s), 0.0, s)))

    # -- density ------------------------------------------------------------

    def _is_two_level(self) -> bool:
        for child in self.children:
            if isinstance(child, NestedArchimedeanCopula):
                if any(isinstance(g, NestedArchimedeanCopula) for g in child.children):
                    return False
        return True

    def log_density(self, u):
        pts, single = _as_points(u, self.dim)
        _require_interior(pts)
        if self._is_two_level():
            out = self._log_density_two_level(pts)
        else:
            # deeper trees fall back to finite differences of the cdf
            out = self._log_density_fd(pts)
        return float(out[0]) if single else out

    def _log_density_two_level(self, pts: np.ndarray) -> np.ndarray:
        """Analytic density for a root with flat-node or leaf children.

        Writing the copula as psi0(sum_b h_b(t_b) + sum_leaf psi0^{-1}(u_i))
        with h_b = psi0^{-1} o psi_b and t_b the child's generator sum, the
        mixed derivative over all coordinates is

            sum over (j_b) of psi0^{(L + sum j_b)}(S)
                * prod_b B_{d_b, j_b}(h_b', h_b'', ...)
            * prod over coordinates of the matching (psi^{-1})'(u_i),

        where B_{n,k} are partial Bell polynomials and L counts direct
        leaves.  Every term carries the same sign (-1)^d, so the sum is done
        with logsumexp on absolute values.
        """
        root = self.generator
        n = pts.shape[0]
        log_inv_prime = np.zeros(n)
        S = np.zeros(n)
        blocks: list[tuple[int, list[np.ndarray]]] = []
        n_direct = 0
        for child in self.children:
            if isinstance(child, NestedArchimedeanCopula):
                idx = [int(i) for i in child.children]
                gen_b = child.generator
                sub = pts[:, idx]
                log_inv_prime += gen_b.log_abs_psi_inv_prime(sub).sum(axis=1)
                t_b = gen_b.psi_inv(sub).sum(axis=1)
                beta = root.theta / gen_b.theta
                log_h = _log_abs_h_derivs(root.family, beta, t_b, len(idx))
                blocks.append((len(idx), _log_bell_rows(len(idx), log_h)))
                S = S + _h_value(root.family, beta, t_b)
            else:
                ui = pts[:, int(child)]
                log_inv_prime += root.log_abs_psi_inv_prime(ui)
                S = S + root.psi_inv(ui)
                n_direct += 1
        if not blocks:
            gen = root
            return gen.log_abs_deriv(S, self.dim) + log_inv_prime
        combos = itertools.product(*[range(1, db + 1) for db, _ in blocks])
        terms = []
        for combo in combos:
            order = n_direct + sum(combo)
            term = root.log_abs_deriv(S, order)
            for (db, bell_rows), j in zip(blocks, combo):
                term = term + bell_rows[j - 1]
            terms.append(term)
        return logsumexp(np.stack(terms), axis=0) + log_inv_prime

    def _log_density_fd(self, pts: np.ndarray, step: float = 1e-4) -> np.ndarray:
        """Mixed central finite differences of the cdf (fallback path)."""
        d = self.dim
        pts = np.clip(pts, 2.0 * step, 1.0 - 2.0 * step)
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
        parity = np.prod(signs, axis=1)
        stencil = pts[:, None, :] + step * signs[None, :, :]
        vals = self._node_cdf(stencil.reshape(-1, d)).reshape(pts.shape[0], -1)
        dens = (vals * parity[None, :]).sum(axis=1) / (2.0 * step) ** d
        return np.log(np.maximum(dens, _TINY))

    # -- sampling -----------------------------------------------------------

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Nested Marshall-Olkin construction (McNeil's algorithm).

        The root frailty V0 has Laplace transform psi0; each inner node draws
        its frailty conditionally on V0 with transform exp(-V0 h_b(t)).  For
        Clayton nesting that conditional law is the exponentially tilted
        stable (sampled by ``tilted_stable``); for Gumbel nesting it is a
        rescaled positive stable.
        """
        self.validate_root()
        root = self.generator
        v0 = root.frailty(n, rng)
        out = np.empty((n, self.dim))
        for child in self.children:
            if isinstance(child, NestedArchimedeanCopula):
                self._sample_block(child, v0, out, rng)
            else:
                e = rng.standard_exponential(n)
                out[:, int(child)] = root.psi(e / v0)
        return out

    def _sample_block(
        self,
        child: "NestedArchimedeanCopula",
        v0: np.ndarray,
        out: np.ndarray,
        rng: np.random.Generator,
    ) -> None:
        if any(isinstance(g, NestedArchimedeanCopula) for g in child.children):
            raise NotImplementedError("sampling implemented for two-level trees")
        root = self.generator
        gen_b = child.generator
        beta = root.theta / gen_b.theta
        if abs(beta - 1.0) < 1e-15:
            vb = v0
        elif root.family == "clayton":
            vb = np.maximum(tilted_stable(beta, v0, rng), _TINY)
        elif root.family == "gumbel":
            vb = v0 ** (1.0 / beta) * positive_stable(beta, v0.size, rng)
        else:
            raise NotImplementedError(f"no nested sampler for {root.family}")
        idx = [int(i) for i in child.children]
        e = rng.standard_exponential((v0.size, len(idx)))
        out[:, idx] = gen_b.psi(e / vb[:, None])


def _h_value(family: str, beta: float, t: np.ndarray) -> np.ndarray:
    """h(t) = psi0^{-1}(psi_b(t)) for same-family parent/child pairs."""
    if family == "clayton":
        return (1.0 + t) ** beta - 1.0
    if family == "gumbel":
        return t**beta
    raise NotImplementedError(f"nested density not implemented for {family}")


def _log_abs_h_derivs(family: str, beta: float, t: np.ndarray, kmax: int) -> list[np.ndarray]:
    """log |h^{(k)}(t)| for k = 1..kmax (-inf where the derivative vanishes)."""
    base = np.log1p(t) if family == "clayton" else np.log(t)
    out = []
    log_coeff = 0.0
    for k in range(1, kmax + 1):
        factor = beta - (k - 1)
        if factor == 0.0:
            out.extend([np.full_like(t, -np.inf)] * (kmax - k + 1))
            break
        log_coeff += np.log(abs(factor))
        out.append(log_coeff + (beta - k) * base)
    return out


def _log_bell_rows(n: int, log_x: list[np.ndarray]) -> list[np.ndarray]:
    """log B_{n,k}(|x_1|,...) for k = 1..n via the standard recurrence,
    carried out in log space (all arguments are log|h^{(j)}| >= -inf)."""
    shape = log_x[0].shape
    neg_inf = np.full(shape, -np.inf)
    # table[m][k] = log B_{m,k}
    table: list[list[np.ndarray]] = [[np.zeros(shape)]]  # B_{0,0} = 1
    for m in range(1, n + 1):
        row: list[np.ndarray] = [neg_inf]  # B_{m,0} = 0 for m >= 1
        for k in range(1, m + 1):
            terms = []
            for i in range(1, m - k + 2):
                prev = table[m - i][k - 1] if k - 1 < len(table[m - i]) else neg_inf
                terms.append(np.log(comb(m - 1, i - 1)) + log_x[i - 1] + prev)
            row.append(logsumexp(np.stack(terms), axis=0))
        table.append(row)
    return table[n][1:]


# ---------------------------------------------------------------------------
# tail dependence
# ---------------------------------------------------------------------------


def tail_dependence_lower(family: str, theta: float, d: int) -> float:
    """Multivariate lower tail-dependence coefficient.

    Clayton: ((d-1)/d)^(1/theta); Gumbel and Frank have none (0).
    """
    _check_tail_args(family, theta, d)
    if family.lower() == "clayton":
        return ((d - 1) / d) ** (1.0 / theta)
    return 0.0


def tail_dependence_upper(family: str, theta: float, d: int) -> float:
    """Multivariate upper tail-dependence coefficient.

    Gumbel: the alternating-sum limit evaluated in closed form with n = d,

        lambda_u = sum_{i=1}^d (-1)^i C(d,i) i^(1/theta)
                   / sum_{i=1}^{d-1} (-1)^i C(d-1,i) i^(1/theta),

    which reduces to 2 - 2^(1/theta) at d = 2.  Clayton and Frank have none.
    """
    _check_tail_args(family, theta, d)
    if family.lower() != "gumbel":
        return 0.0
    if theta == 1.0:
        return 0.0  # independence; the ratio degenerates to 0/0 for d >= 3
    a = 1.0 / theta
    num = sum((-1.0) ** i * comb(d, i) * i**a for i in range(1, d + 1))
    den = sum((-1.0) ** i * comb(d - 1, i) * i**a for i in range(1, d))
    return num / den


def _check_tail_args(family: str, theta: float, d: int) -> None:
    generator_from_family(family, theta)  # parameter validation
    if d < 2:
        raise ValueError("tail dependence requires d >= 2")


def inverse_tail_dependence(family: str, target: float, d: int) -> float:
    """theta such that the family's own tail coefficient equals ``target``.

    Clayton is matched on the lower coefficient, Gumbel on the upper one.
    Plain bisection on theta; the coefficients are increasing in theta.
    """
    if not 0.0 < target < 1.0:
        raise ValueError("target tail dependence must be in (0, 1)")
    family = family.lower()
    if family == "clayton":
        func = lambda th: tail_dependence_lower(family, th, d)
        lo, hi = 1e-8, 1e6
    elif family == "gumbel":
        func = lambda th: tail_dependence_upper(family, th, d)
        lo, hi = 1.0 + 1e-12, 1e6
    else:
        raise ValueError(f"the {family} family has no tail dependence to invert")
    if not func(lo) <= target <= func(hi):
        raise ValueError("target tail dependence unattainable for the family")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if func(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * max(1.0, lo):
            break
    mid = 0.5 * (lo + hi)
    if abs(func(mid) - target) > 1e-6:
        raise ValueError("bisection failed to attain the target coefficient")
    return mid


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

CopulaModel = Union[ArchimedeanCopula, NestedArchimedeanCopula]


def copula_from_config(cfg: Mapping) -> CopulaModel:
    """Build a copula from its config mapping.

    Flat: ``{"family": .., "theta": .., "dim": d}``.
    Nested: ``{"family": .., "theta": .., "children": [...]}`` where each
    child is another nested mapping or ``{"leaf": i}`` with 1-based leaf
    indices.
    """
    if "children" in cfg:
        model = _nested_from_config(cfg)
        model.validate_root()
        return model
    family = cfg.get("family")
    theta = cfg.get("theta")
    dim = cfg.get("dim")
    if family is None or theta is None or dim is None:
        raise ValueError("flat copula config needs family, theta and dim")
    return ArchimedeanCopula(generator_from_family(str(family), float(theta)), int(dim))


def _nested_from_config(cfg: Mapping) -> NestedArchimedeanCopula:
    gen = generator_from_family(str(cfg["family"]), float(cfg["theta"]))
    children: list[Child] = []
    for child in cfg["children"]:
        if "leaf" in child:
            leaf = int(child["leaf"])
            if leaf < 1:
                raise ValueError("leaf indices are 1-based")
            children.append(leaf - 1)
        else:
            children.append(_nested_from_config(child))
    return NestedArchimedeanCopula(gen, tuple(children))


def copula_to_config(model: CopulaModel) -> dict:
    """Inverse of ``copula_from_config`` (leaves serialized 1-based)."""
    if isinstance(model, ArchimedeanCopula):
        return {
            "family": model.generator.family,
            "theta": model.generator.theta,
            "dim": model.dim,
        }
    children = []
    for child in model.children:
        if isinstance(child, NestedArchimedeanCopula):
            children.append(copula_to_config(child))
        else:
            children.append({"leaf": int(child) + 1})
    return {
        "family": model.generator.family,
        "theta": model.generator.theta,
        "children": children,
    }
