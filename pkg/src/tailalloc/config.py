"""Experiment configuration: TOML or JSON files plus CLI overrides.

Desk-scale defaults keep a full experiment in the minutes range; the
paper-scale protocol sizes remain reachable by overriding them in the file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

from .baselines import MixingDistribution
from .copulas import CopulaModel, copula_from_config
from .marginals import Marginal, marginals_from_config
from .smc import KernelSpec

try:  # Python 3.11+
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover
    import tomli as _toml

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "config_from_mapping", "PAPER_ALPHA_GRID"]

#: the quantile grid used throughout the case studies
PAPER_ALPHA_GRID = (
    0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9,
    0.95, 0.99, 0.995, 0.999, 0.9995, 0.9999, 0.99995,
)

_KNOWN_METHODS = ("mc", "smc", "is_ach")


class ConfigError(ValueError):
    """Invalid configuration (CLI exit code 2)."""


@dataclass
class ExperimentConfig:
    copula: CopulaModel
    marginals: list[Marginal]
    alphas: tuple[float, ...]
    targets: tuple[float, ...]
    methods: tuple[str, ...]
    n_mc: int = 1000
    n_smc: int = 250
    n_is: int = 1000
    n_repetitions: int = 100
    kernel: KernelSpec = field(default_factory=KernelSpec)
    ess_threshold: float = 0.5
    move_sweeps: int = 1
    resample_scheme: str = "multinomial"
    mixing: MixingDistribution = field(default_factory=MixingDistribution.default_geometric)
    quantile_n_per_run: int = 1_000_000
    quantile_n_runs: int = 50
    seed: int = 0
    out_dir: Path = Path("out")
    groups: dict[str, tuple[int, ...]] | None = None  # 1-based cells per group

    def __post_init__(self):
        d = self.copula.dim
        if d < 1 or len(self.marginals) != d:
            raise ConfigError("marginal count must match the copula dimension")
        if not self.methods:
            raise ConfigError("at least one method is required")
        for m in self.methods:
            if m not in _KNOWN_METHODS:
                raise ConfigError(f"unknown method {m!r}")
        for size in (self.n_mc, self.n_smc, self.n_is, self.n_repetitions,
                     self.quantile_n_per_run, self.quantile_n_runs):
            if size < 1:
                raise ConfigError("all experiment sizes must be positive")
        if not self.targets:
            raise ConfigError("at least one target alpha is required")
        for t in self.targets:
            if not any(abs(t - a) <= 1e-12 for a in self.alphas):
                raise ConfigError(f"target alpha {t} must appear in the alpha grid")
        if self.groups is not None:
            cells = sorted(c for group in self.groups.values() for c in group)
            if cells != list(range(1, d + 1)):
                raise ConfigError("groups must partition cells 1..d")

    @property
    def dim(self) -> int:
        return self.copula.dim

    def grouping(self) -> dict[int, str] | None:
        """0-based cell -> group label mapping, if groups are configured."""
        if self.groups is None:
            return None
        return {c - 1: name for name, cells in self.groups.items() for c in cells}


def config_from_mapping(raw: Mapping) -> ExperimentConfig:
    try:
        copula = copula_from_config(raw["copula"])
        marginals = marginals_from_config(raw["marginals"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad model section: {exc}") from exc
    exp = dict(raw.get("experiment", {}))
    smc = dict(raw.get("smc", {}))
    quant = dict(raw.get("quantiles", {}))

    kernel_kind = str(smc.pop("kernel", "global_beta"))
    try:
        kernel = KernelSpec(kind=kernel_kind)
        mixing_raw = raw.get("mixing", {}).get("atoms")
        mixing = (
            MixingDistribution(tuple((float(l), float(p)) for l, p in mixing_raw))
            if mixing_raw
            else MixingDistribution.default_geometric()
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    groups_raw = raw.get("groups")
    groups = (
        {str(k): tuple(int(c) for c in v) for k, v in groups_raw.items()}
        if groups_raw
        else None
    )

    alphas = tuple(float(a) for a in exp.get("alphas", PAPER_ALPHA_GRID))
    targets = tuple(float(t) for t in exp.get("targets", (alphas[-1],)))
    try:
        return ExperimentConfig(
            copula=copula,
            marginals=marginals,
            alphas=alphas,
            targets=targets,
            methods=tuple(str(m) for m in exp.get("methods", _KNOWN_METHODS)),
            n_mc=int(exp.get("n_mc", 1000)),
            n_smc=int(exp.get("n_smc", 250)),
            n_is=int(exp.get("n_is", 1000)),
            n_repetitions=int(exp.get("n_repetitions", 100)),
            kernel=kernel,
            ess_threshold=float(smc.get("ess_threshold", 0.5)),
            move_sweeps=int(smc.get("move_sweeps", 1)),
            resample_scheme=str(smc.get("resample", "multinomial")),
            mixing=mixing,
            quantile_n_per_run=int(quant.get("n_per_run", 1_000_000)),
            quantile_n_runs=int(quant.get("n_runs", 50)),
            seed=int(exp.get("seed", 0)),
            out_dir=Path(exp.get("out", "out")),
            groups=groups,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(
    path: Union[str, Path],
    *,
    seed: int | None = None,
    out: Union[str, Path, None] = None,
) -> ExperimentConfig:
    """Parse a TOML or JSON config file, applying CLI overrides."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix.lower() == ".json":
            raw = json.loads(path.read_text())
        else:
            with open(path, "rb") as fh:
                raw = _toml.load(fh)
    except (json.JSONDecodeError, _toml.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    config = config_from_mapping(raw)
    if seed is not None:
        config.seed = int(seed)
    if out is not None:
        config.out_dir = Path(out)
    return config
