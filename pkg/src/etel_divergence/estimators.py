"""Outer optimisers: EL, ET and ETEL point estimates of theta."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from etel_divergence.config import SolverOptions
from etel_divergence.errors import (
    AllStartsFailed,
    ModelError,
    NumericalError,
    OuterNoConvergence,
)
from etel_divergence.gradients import criterion_gradient
from etel_divergence.models import Method
from etel_divergence.moments import (
    MomentModel,
    Sample,
    as_theta,
    evaluate_moments,
    mean_moments,
)
from etel_divergence.tilting import TiltSolution, tilt

logger = logging.getLogger(__name__)

INFEASIBLE_PENALTY = 1e12
GRID_POINTS = 41
MAX_WIDENINGS = 6


@dataclass(frozen=True)
class EstimatorResult:
    """Point estimate plus the tilt at ``theta_hat``.

    ``objective`` is the minimised criterion: ``D_Kull(u, p_EL)`` for EL,
    ``D_Kull(p_ET, u)`` for ET and ``D_Kull(u, p_ET) = -l_ETEL`` for ETEL.
    """

    method: Method
    theta_hat: np.ndarray
    tilt: TiltSolution
    objective: float
    outer_iterations: int
    converged: bool
    failures: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method.value,
            "theta_hat": self.theta_hat.tolist(),
            "t": self.tilt.t.tolist(),
            "objective": self.objective,
            "converged": self.converged,
            "iterations": self.outer_iterations,
            "inner_iterations": self.tilt.iterations,
            "failures": self.failures,
        }


# ── Criteria ─────────────────────────────────────────────────────


def _criterion(
    method: Method,
    model: MomentModel,
    sample: Sample,
    theta: Any,
    opts: SolverOptions,
) -> tuple[float, TiltSolution]:
    mm = evaluate_moments(model, sample, theta)
    sol = tilt(method, mm, opts.tol, opts.max_iter, hull_limit=opts.hull_limit)
    g = mm.values
    if method is Method.EL:
        value = float(np.mean(np.log1p(g @ sol.t)))
    elif method is Method.ET:
        value = float(np.sum(sol.weights * (sol.log_weights + np.log(mm.n))))
    else:
        value = float(logsumexp(g @ sol.t) - np.log(mm.n) - sol.t @ mean_moments(mm))
    return value, sol


def profile_criterion(
    method: Method | str,
    model: MomentModel,
    sample: Sample,
    theta: Any,
    opts: SolverOptions | None = None,
) -> float:
    """Value of the method's minimised criterion at ``theta``."""
    value, _ = _criterion(Method.parse(method), model, sample, theta, opts or SolverOptions())
    return value


class _Objective:
    """Criterion wrapper that turns inner failures into a flat penalty."""

    def __init__(
        self, method: Method, model: MomentModel, sample: Sample, opts: SolverOptions
    ) -> None:
        self.method = method
        self.model = model
        self.sample = sample
        self.opts = opts
        self.failures: Counter[str] = Counter()
        self.messages: dict[str, str] = {}

    @property
    def failure_count(self) -> int:
        return sum(self.failures.values())

    def __call__(self, x: Any) -> float:
        theta = np.atleast_1d(np.asarray(x, dtype=float))
        try:
            value, _ = _criterion(self.method, self.model, self.sample, theta, self.opts)
        except (NumericalError, ModelError) as exc:
            name = type(exc).__name__
            self.failures[name] += 1
            self.messages.setdefault(name, str(exc))
            return INFEASIBLE_PENALTY
        if not np.isfinite(value):
            self.failures["NonFiniteCriterion"] += 1
            return INFEASIBLE_PENALTY
        return value

    def gradient(self, x: Any) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(x, dtype=float))
        try:
            return criterion_gradient(self.method, self.model, self.sample, theta, self.opts)
        except (NumericalError, ModelError):
            return np.zeros_like(theta)

    def all_failed(self) -> AllStartsFailed:
        if not self.failures:
            return AllStartsFailed("every probed theta was infeasible")
        name, count = self.failures.most_common(1)[0]
        detail = self.messages.get(name, "")
        return AllStartsFailed(
            f"every probed theta failed ({count}x {name}: {detail})".rstrip()
        )


# ── Outer search ─────────────────────────────────────────────────


def _default_init(model: MomentModel, sample: Sample, init: Any) -> np.ndarray:
    if init is not None:
        return as_theta(init, model.p)
    if model.p == sample.d:
        return sample.data.mean(axis=0)
    raise ModelError("init is required when the model has p != d")


def _domain_1d(model: MomentModel) -> tuple[float, float]:
    if model.param_domain is None:
        return -np.inf, np.inf
    lo, hi = model.param_domain
    return lo[0], hi[0]


def _search_1d(
    objective: _Objective, init: float, opts: SolverOptions, domain: tuple[float, float]
) -> tuple[float, int, bool]:
    lo_dom, hi_dom = domain
    width = opts.bracket_width
    centre = float(np.clip(init, lo_dom, hi_dom))
    nfev = 0
    for _ in range(MAX_WIDENINGS + 1):
        lo = max(centre - width, lo_dom)
        hi = min(centre + width, hi_dom)
        grid = np.linspace(lo, hi, GRID_POINTS)
        values = np.array([objective(x) for x in grid])
        nfev += grid.size
        k = int(np.argmin(values))
        if values[k] >= INFEASIBLE_PENALTY:
            width *= 2.0
            continue
        at_edge = (k == 0 and lo > lo_dom) or (k == grid.size - 1 and hi < hi_dom)
        if at_edge:
            centre = float(grid[k])
            width *= 2.0
            continue
        a = grid[max(k - 1, 0)]
        b = grid[min(k + 1, grid.size - 1)]
        res = optimize.minimize_scalar(
            objective,
            bounds=(a, b),
            method="bounded",
            options={"xatol": opts.outer_tol, "maxiter": opts.max_outer},
        )
        nfev += int(res.nfev)
        x = float(res.x)
        if float(res.fun) > values[k]:
            x = float(grid[k])
        logger.debug("Brent search: x=%.10g f=%.6g nfev=%d", x, float(res.fun), nfev)
        return x, int(getattr(res, "nit", res.nfev)), bool(res.success)
    raise objective.all_failed()


def _search_nd(
    objective: _Objective, init: np.ndarray, opts: SolverOptions
) -> tuple[np.ndarray, int, bool]:
    if objective(init) >= INFEASIBLE_PENALTY:
        raise objective.all_failed()
    options = {"xatol": opts.outer_tol, "fatol": 1e-14, "maxiter": opts.max_outer}
    first = optimize.minimize(objective, init, method="Nelder-Mead", options=options)
    # one restart from the best vertex
    second = optimize.minimize(objective, first.x, method="Nelder-Mead", options=options)
    best = second if second.fun <= first.fun else first
    if best.fun >= INFEASIBLE_PENALTY:
        raise objective.all_failed()
    iterations = int(first.nit) + int(second.nit)
    return np.asarray(best.x, dtype=float), iterations, bool(second.success)


def _search_bfgs(
    objective: _Objective, init: np.ndarray, opts: SolverOptions
) -> tuple[np.ndarray, int, bool]:
    if objective(init) >= INFEASIBLE_PENALTY:
        raise objective.all_failed()
    jac = None if objective.method is Method.EL else objective.gradient
    res = optimize.minimize(
        objective,
        init,
        method="BFGS",
        jac=jac,
        options={"gtol": 1e-9, "maxiter": opts.max_outer},
    )
    if res.fun >= INFEASIBLE_PENALTY:
        raise objective.all_failed()
    # status 2 is precision loss at a flat optimum, not a budget overrun
    converged = bool(res.success) or int(res.status) == 2
    return np.asarray(res.x, dtype=float), int(res.nit), converged


def _estimate(
    method: Method,
    model: MomentModel,
    sample: Sample,
    init: Any,
    opts: SolverOptions | None,
) -> EstimatorResult:
    opts = opts or SolverOptions()
    start = _default_init(model, sample, init)
    objective = _Objective(method, model, sample, opts)

    choice = opts.optimizer
    if choice == "auto":
        choice = "brent" if model.p == 1 else "nelder-mead"
    if choice == "brent" and model.p != 1:
        raise ModelError("the brent optimizer requires a scalar parameter (p = 1)")

    if choice == "brent":
        x, iterations, success = _search_1d(objective, float(start[0]), opts, _domain_1d(model))
        theta_hat = np.array([x])
    elif choice == "bfgs":
        theta_hat, iterations, success = _search_bfgs(objective, start, opts)
    else:
        theta_hat, iterations, success = _search_nd(objective, start, opts)

    if not success:
        raise OuterNoConvergence(
            f"{method.value} outer search hit max_outer={opts.max_outer} without converging"
        )

    value, sol = _criterion(method, model, sample, theta_hat, opts)
    if objective.failure_count:
        logger.debug(
            "%s search met %d inner failure(s): %s",
            method.value,
            objective.failure_count,
            dict(objective.failures),
        )
    return EstimatorResult(
        method=method,
        theta_hat=theta_hat,
        tilt=sol,
        objective=value,
        outer_iterations=iterations,
        converged=sol.converged,
        failures=objective.failure_count,
    )


def estimate_el(
    model: MomentModel, sample: Sample, init: Any = None, opts: SolverOptions | None = None
) -> EstimatorResult:
    """Minimise ``-(1/n) sum log(n p_EL,i(theta))``."""
    return _estimate(Method.EL, model, sample, init, opts)


def estimate_et(
    model: MomentModel, sample: Sample, init: Any = None, opts: SolverOptions | None = None
) -> EstimatorResult:
    """Minimise ``sum p_ET,i log(n p_ET,i)``."""
    return _estimate(Method.ET, model, sample, init, opts)


def estimate_etel(
    model: MomentModel, sample: Sample, init: Any = None, opts: SolverOptions | None = None
) -> EstimatorResult:
    """Maximise the ETEL profile log-likelihood; the tilt is the ET solution."""
    return _estimate(Method.ETEL, model, sample, init, opts)


def estimate(
    method: Method | str,
    model: MomentModel,
    sample: Sample,
    init: Any = None,
    opts: SolverOptions | None = None,
) -> EstimatorResult:
    return _estimate(Method.parse(method), model, sample, init, opts)
