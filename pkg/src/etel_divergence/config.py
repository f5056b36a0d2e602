"""Solver options and Monte Carlo experiment configuration."""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, fields
from numbers import Integral, Real
from pathlib import Path
from typing import Any

import numpy as np

from etel_divergence.errors import ConfigError
from etel_divergence.models import Family, Method

OPTIMIZERS = ("auto", "brent", "nelder-mead", "bfgs")
MAX_SEED = 2**64 - 1

DEFAULT_LAMBDAS: tuple[float, ...] = (-1.0, -0.5, 0.0, 2.0 / 3.0)
DEFAULT_CDF_GRID: tuple[float, ...] = tuple(round(-1.0 + 0.1 * k, 10) for k in range(91))


def _to_float(value: Any, field_name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, Real):
        raise ConfigError(f"{field_name} must be a number")
    result = float(value)
    if not np.isfinite(result):
        raise ConfigError(f"{field_name} must be finite")
    return result


def _to_positive_float(value: Any, field_name: str) -> float:
    result = _to_float(value, field_name)
    if result <= 0:
        raise ConfigError(f"{field_name} must be > 0")
    return result


def _to_int(value: Any, field_name: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, Integral):
        raise ConfigError(f"{field_name} must be an integer")
    result = int(value)
    if result < minimum:
        raise ConfigError(f"{field_name} must be >= {minimum}")
    return result


def _to_float_tuple(values: Any, field_name: str) -> tuple[float, ...]:
    if isinstance(values, (str, bytes)) or not isinstance(values, Sequence):
        raise ConfigError(f"{field_name} must be a list of numbers")
    return tuple(_to_float(v, f"{field_name} items") for v in values)


@dataclass(frozen=True)
class SolverOptions:
    """Inner (tilt) and outer (theta search) numerics."""

    tol: float = 1e-10
    max_iter: int = 100
    hull_limit: float = 1e6
    outer_tol: float = 1e-8
    max_outer: int = 200
    optimizer: str = "auto"
    bracket_width: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "tol", _to_positive_float(self.tol, "tol"))
        object.__setattr__(self, "max_iter", _to_int(self.max_iter, "max_iter", 1))
        object.__setattr__(self, "hull_limit", _to_positive_float(self.hull_limit, "hull_limit"))
        object.__setattr__(self, "outer_tol", _to_positive_float(self.outer_tol, "outer_tol"))
        object.__setattr__(self, "max_outer", _to_int(self.max_outer, "max_outer", 1))
        object.__setattr__(
            self, "bracket_width", _to_positive_float(self.bracket_width, "bracket_width")
        )
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(
                f"optimizer must be one of {', '.join(OPTIMIZERS)}, got {self.optimizer!r}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class ExperimentConfig:
    """Replication study description.

    ``delta`` drives the data-generating law ``N(theta, theta^2 + delta)``;
    ``model_delta`` is the delta of the fitted working model. With the
    default ``model_delta = 1`` any ``delta != 1`` is a misspecified design.
    """

    delta: float = 1.0
    theta_true: float = 0.0
    theta0: float = 0.0
    n: int = 100
    replications: int = 2000
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    estimators: tuple[Method, ...] = (Method.ETEL,)
    families: tuple[Family, ...] = (Family.T, Family.S)
    alpha: float = 0.05
    master_seed: int = 20240917
    cdf_grid: tuple[float, ...] = DEFAULT_CDF_GRID
    model_delta: float = 1.0
    power_eval_n: int = 20000
    threads: int = 1
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self) -> None:
        set_ = object.__setattr__
        set_(self, "delta", _to_positive_float(self.delta, "delta"))
        set_(self, "model_delta", _to_positive_float(self.model_delta, "model_delta"))
        set_(self, "theta_true", _to_float(self.theta_true, "theta_true"))
        set_(self, "theta0", _to_float(self.theta0, "theta0"))
        set_(self, "n", _to_int(self.n, "n", 3))
        set_(self, "replications", _to_int(self.replications, "R", 1))
        set_(self, "power_eval_n", _to_int(self.power_eval_n, "power_eval_n", 10))
        set_(self, "threads", _to_int(self.threads, "threads", 1))
        seed = _to_int(self.master_seed, "master_seed", 0)
        if seed > MAX_SEED:
            raise ConfigError("master_seed must fit in 64 bits")
        set_(self, "master_seed", seed)

        alpha = _to_float(self.alpha, "alpha")
        if not 0.0 < alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
        set_(self, "alpha", alpha)

        lambdas = _to_float_tuple(self.lambdas, "lambdas")
        if not lambdas:
            raise ConfigError("lambdas must not be empty")
        set_(self, "lambdas", lambdas)

        grid = _to_float_tuple(self.cdf_grid, "cdf_grid")
        if not grid:
            raise ConfigError("cdf_grid must not be empty")
        if any(b < a for a, b in zip(grid, grid[1:])):
            raise ConfigError("cdf_grid must be sorted ascending")
        set_(self, "cdf_grid", grid)

        try:
            estimators = tuple(dict.fromkeys(Method.parse(m) for m in self.estimators))
            families = tuple(dict.fromkeys(Family.parse(f) for f in self.families))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not estimators:
            raise ConfigError("estimators must not be empty")
        if not families:
            raise ConfigError("families must not be empty")
        if any(f not in (Family.T, Family.S, Family.G2) for f in families):
            raise ConfigError("families must be a subset of t, s, g2")
        set_(self, "estimators", estimators)
        set_(self, "families", families)

        if not isinstance(self.solver, SolverOptions):
            raise ConfigError("solver must be a SolverOptions instance")

    @property
    def R(self) -> int:
        return self.replications

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExperimentConfig:
        """Build from JSON-style keys; unknown keys raise :class:`ConfigError`."""
        if not isinstance(data, Mapping):
            raise ConfigError("experiment config must be a JSON object")
        allowed = {f.name for f in fields(cls)} | {"R"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"Unknown config key(s): {', '.join(unknown)}")
        if "R" in data and "replications" in data:
            raise ConfigError("give either 'R' or 'replications', not both")

        kwargs: dict[str, Any] = {}
        for key, value in data.items():
            if key == "R":
                kwargs["replications"] = value
            elif key == "solver":
                kwargs["solver"] = _solver_from_dict(value)
            elif key in ("lambdas", "cdf_grid", "estimators", "families"):
                if isinstance(value, (str, bytes)) or not isinstance(value, Sequence):
                    raise ConfigError(f"{key} must be a list")
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "delta": self.delta,
            "theta_true": self.theta_true,
            "theta0": self.theta0,
            "n": self.n,
            "R": self.replications,
            "lambdas": list(self.lambdas),
            "estimators": [m.value for m in self.estimators],
            "families": [f.value for f in self.families],
            "alpha": self.alpha,
            "master_seed": self.master_seed,
            "cdf_grid": list(self.cdf_grid),
            "model_delta": self.model_delta,
            "power_eval_n": self.power_eval_n,
            "threads": self.threads,
            "solver": self.solver.to_dict(),
        }


def _solver_from_dict(data: Any) -> SolverOptions:
    if not isinstance(data, Mapping):
        raise ConfigError("solver must be a JSON object")
    allowed = {f.name for f in fields(SolverOptions)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"Unknown solver key(s): {', '.join(unknown)}")
    return SolverOptions(**dict(data))


def load_experiment_config(path: Path) -> ExperimentConfig:
    """Read an :class:`ExperimentConfig` from a JSON file.

    Raises
    ------
    FileNotFoundError
        If *path* does not exist.
    ConfigError
        If the JSON is malformed or violates the schema.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    if not path.is_file():
        raise ConfigError(f"Config path is not a file: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Config {path} is not valid JSON: {exc}") from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"Could not read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)
