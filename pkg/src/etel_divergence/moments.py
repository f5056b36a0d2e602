"""Moment-condition models: samples, estimating functions, Jacobians.

A :class:`MomentModel` bundles vectorised callables::

    g(data[n, d], theta[p])        -> values[n, r]
    jacobian(data[n, d], theta[p]) -> values[n, r, p]   (dg/dtheta^T per row)

Row-wise callables can be wrapped with :meth:`MomentModel.from_rowwise`.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from etel_divergence.errors import (
    DimensionMismatch,
    InvalidDelta,
    ModelError,
    NonFiniteModelOutput,
)

MomentFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
RowFn = Callable[[np.ndarray, np.ndarray], Any]

FD_REL_STEP = 1e-6


def fd_step(value: float) -> float:
    """Central-difference step used everywhere: ``1e-6 * max(1, |value|)``."""
    return FD_REL_STEP * max(1.0, abs(float(value)))


def as_theta(theta: Any, p: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(theta, dtype=float)).reshape(-1)
    if arr.shape[0] != p:
        raise DimensionMismatch(f"theta must have length {p}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ModelError("theta must be finite")
    return arr


# ── Containers ───────────────────────────────────────────────────


@dataclass(frozen=True)
class Sample:
    """Observations ``X_1..X_n`` as an ``n x d`` float matrix."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise DimensionMismatch("sample data must be a vector or an n x d matrix")
        if arr.shape[0] < 1:
            raise ModelError("sample must contain at least one observation")
        if not np.all(np.isfinite(arr)):
            raise ModelError("sample data must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_values(cls, values: Sequence[float] | np.ndarray) -> Sample:
        return cls(np.asarray(values, dtype=float))

    @property
    def n(self) -> int:
        return int(self.data.shape[0])

    @property
    def d(self) -> int:
        return int(self.data.shape[1])


@dataclass(frozen=True)
class MomentMatrix:
    """Cached ``g(X_i, theta)`` rows for one parameter value."""

    values: np.ndarray
    theta: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DimensionMismatch("moment matrix must be n x r")
        if not np.all(np.isfinite(values)):
            raise NonFiniteModelOutput("moment matrix contains non-finite entries")
        values = values.copy()
        values.setflags(write=False)
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float)).copy()
        theta.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_rows(
        cls, rows: Sequence[Sequence[float]] | np.ndarray, theta: Any = 0.0
    ) -> MomentMatrix:
        arr = np.asarray(rows, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        return cls(arr, np.atleast_1d(np.asarray(theta, dtype=float)))

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def r(self) -> int:
        return int(self.values.shape[1])


# ── Model ────────────────────────────────────────────────────────


@dataclass(frozen=True)
class MomentModel:
    """Estimating-function bundle with dimensions ``(p, r)``.

    ``jacobian`` may be ``None``; central differences are then used with
    step ``1e-6 * max(1, |theta_j|)``.
    """

    p: int
    r: int
    g: MomentFn
    jacobian: MomentFn | None = None
    d: int = 1
    param_domain: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    label: str = "custom"

    def __post_init__(self) -> None:
        for name in ("p", "r", "d"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ModelError(f"{name} must be a positive integer")
        if self.r < self.p:
            raise DimensionMismatch(f"r must be >= p (got r={self.r}, p={self.p})")
        if self.param_domain is not None:
            lower, upper = self.param_domain
            lo = tuple(float(v) for v in np.atleast_1d(lower))
            hi = tuple(float(v) for v in np.atleast_1d(upper))
            if len(lo) != self.p or len(hi) != self.p:
                raise DimensionMismatch("param_domain bounds must have length p")
            if any(a >= b for a, b in zip(lo, hi)):
                raise ModelError("param_domain lower bounds must be < upper bounds")
            object.__setattr__(self, "param_domain", (lo, hi))

    @classmethod
    def from_rowwise(
        cls,
        p: int,
        r: int,
        g_row: RowFn,
        jacobian_row: RowFn | None = None,
        *,
        d: int = 1,
        param_domain: tuple[Sequence[float], Sequence[float]] | None = None,
        label: str = "custom",
    ) -> MomentModel:
        """Build a model from per-observation callables ``g(x_row, theta)``."""

        def g(data: np.ndarray, theta: np.ndarray) -> np.ndarray:
            return np.array([np.atleast_1d(g_row(row, theta)) for row in data], dtype=float)

        jac: MomentFn | None = None
        if jacobian_row is not None:
            row_fn = jacobian_row

            def jac(data: np.ndarray, theta: np.ndarray) -> np.ndarray:
                return np.array(
                    [np.asarray(row_fn(row, theta), dtype=float).reshape(r, p) for row in data]
                )

        domain = None
        if param_domain is not None:
            domain = (tuple(param_domain[0]), tuple(param_domain[1]))
        return cls(p=p, r=r, g=g, jacobian=jac, d=d, param_domain=domain, label=label)

    def in_domain(self, theta: np.ndarray) -> bool:
        if self.param_domain is None:
            return True
        lo, hi = self.param_domain
        return bool(np.all(theta >= np.asarray(lo)) and np.all(theta <= np.asarray(hi)))

    def moments(self, data: np.ndarray, theta: np.ndarray) -> np.ndarray:
        values = np.asarray(self.g(data, theta), dtype=float)
        if values.ndim == 1 and self.r == 1:
            values = values.reshape(-1, 1)
        if values.shape != (data.shape[0], self.r):
            raise DimensionMismatch(
                f"g returned shape {values.shape}, expected ({data.shape[0]}, {self.r})"
            )
        if not np.all(np.isfinite(values)):
            raise NonFiniteModelOutput(f"g returned non-finite values at theta={theta.tolist()}")
        return values

    def jacobians(self, data: np.ndarray, theta: np.ndarray) -> np.ndarray:
        if self.jacobian is None:
            jac = self._numeric_jacobians(data, theta)
        else:
            jac = np.asarray(self.jacobian(data, theta), dtype=float)
            jac = jac.reshape(data.shape[0], self.r, self.p)
        if not np.all(np.isfinite(jac)):
            raise NonFiniteModelOutput(
                f"jacobian returned non-finite values at theta={theta.tolist()}"
            )
        return jac

    def _numeric_jacobians(self, data: np.ndarray, theta: np.ndarray) -> np.ndarray:
        out = np.empty((data.shape[0], self.r, self.p))
        for j in range(self.p):
            h = fd_step(theta[j])
            up = theta.copy()
            down = theta.copy()
            up[j] += h
            down[j] -= h
            out[:, :, j] = (self.moments(data, up) - self.moments(data, down)) / (2.0 * h)
        return out


# ── Operations ───────────────────────────────────────────────────


def _check_sample(model: MomentModel, sample: Sample) -> None:
    if sample.d != model.d:
        raise DimensionMismatch(
            f"sample has {sample.d} column(s) but model {model.label!r} expects {model.d}"
        )


def evaluate_moments(model: MomentModel, sample: Sample, theta: Any) -> MomentMatrix:
    """Evaluate ``g(X_i, theta)`` for every observation."""
    _check_sample(model, sample)
    th = as_theta(theta, model.p)
    if not model.in_domain(th):
        raise ModelError(f"theta={th.tolist()} is outside the parameter domain")
    return MomentMatrix(model.moments(sample.data, th), th)


def mean_moments(mm: MomentMatrix) -> np.ndarray:
    return mm.values.mean(axis=0)


def sample_s11(mm: MomentMatrix) -> np.ndarray:
    """``(1/n) sum g_i g_i^T``."""
    g = mm.values
    s11 = g.T @ g / mm.n
    return 0.5 * (s11 + s11.T)


def sample_s12(model: MomentModel, sample: Sample, theta: Any) -> np.ndarray:
    """Mean of the per-observation Jacobians, ``r x p``."""
    _check_sample(model, sample)
    th = as_theta(theta, model.p)
    return model.jacobians(sample.data, th).mean(axis=0)


# ── Builtin mean-variance normal model ───────────────────────────

BUILTIN_DOMAIN = ((-10.0,), (10.0,))


def mean_variance_normal_model(delta: float) -> MomentModel:
    """``g = (x - theta, x^2 - 2 theta^2 - delta)`` with Jacobian ``(-1, -4 theta)``."""
    delta = float(delta)
    if not np.isfinite(delta) or delta <= 0:
        raise InvalidDelta(f"delta must be > 0, got {delta}")

    def g(data: np.ndarray, theta: np.ndarray) -> np.ndarray:
        x = data[:, 0]
        th = theta[0]
        return np.column_stack((x - th, x * x - 2.0 * th * th - delta))

    def jacobian(data: np.ndarray, theta: np.ndarray) -> np.ndarray:
        n = data.shape[0]
        out = np.empty((n, 2, 1))
        out[:, 0, 0] = -1.0
        out[:, 1, 0] = -4.0 * theta[0]
        return out

    return MomentModel(
        p=1,
        r=2,
        g=g,
        jacobian=jacobian,
        d=1,
        param_domain=BUILTIN_DOMAIN,
        label=f"mean-variance-normal(delta={delta:g})",
    )


def pseudo_true_values(delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Pseudo-true ``(theta*, t*)`` of the ``delta=1`` working model.

    Data are N(0, delta). Exponential tilting of that normal by ``t2 * x^2``
    restores unit variance at ``t2 = (1 - delta) / (2 delta)``; ``t1 = 0`` by
    symmetry. Stated for ``delta > 1/2``.
    """
    delta = float(delta)
    if not delta > 0.5:
        raise InvalidDelta(f"pseudo-true values are stated for delta > 1/2, got {delta}")
    return np.zeros(1), np.array([0.0, (1.0 - delta) / (2.0 * delta)])
