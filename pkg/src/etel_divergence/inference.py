"""Empirical phi-divergence test statistics, p-values and reference distributions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import special, stats

from etel_divergence.config import SolverOptions
from etel_divergence.divergence import (
    HFunction,
    PhiFunction,
    d_phi,
    kullback_phi,
)
from etel_divergence.errors import (
    ConfigError,
    DomainError,
    NullInfeasible,
    NumericalError,
)
from etel_divergence.estimators import EstimatorResult, estimate
from etel_divergence.models import Family, Method
from etel_divergence.moments import MomentModel, Sample, evaluate_moments
from etel_divergence.tilting import TiltSolution, tilt


@dataclass(frozen=True)
class TestResult:
    """Outcome of a simple-null test; ``reject`` iff ``statistic > critical_value``."""

    __test__ = False  # not a pytest class

    statistic: float
    df: int
    p_value: float
    critical_value: float
    alpha: float
    reject: bool
    family: Family
    estimator: Method
    lambda_or_phi: str
    theta_hat: tuple[float, ...] = ()
    theta0: tuple[float, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "critical_value": self.critical_value,
            "alpha": self.alpha,
            "reject": self.reject,
            "family": self.family.value,
            "estimator": self.estimator.value,
            "lambda_or_phi": self.lambda_or_phi,
            "theta_hat": list(self.theta_hat),
            "theta0": list(self.theta0),
        }


# ── Reference distributions ──────────────────────────────────────


def _check_df(k: float) -> float:
    k = float(k)
    if not k >= 1:
        raise DomainError(f"degrees of freedom must be >= 1, got {k}")
    return k


def chi2_cdf(x: float, k: float) -> float:
    """Regularised lower incomplete gamma ``P(k/2, x/2)``."""
    k = _check_df(k)
    if not x >= 0:
        raise DomainError(f"chi-square CDF needs x >= 0, got {x}")
    return float(special.gammainc(k / 2.0, float(x) / 2.0))


def chi2_sf(x: float, k: float) -> float:
    k = _check_df(k)
    if x < 0:
        return 1.0
    return float(special.gammaincc(k / 2.0, float(x) / 2.0))


def chi2_quantile(q: float, k: float) -> float:
    k = _check_df(k)
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must be in (0, 1), got {q}")
    return float(2.0 * special.gammaincinv(k / 2.0, float(q)))


def noncentral_chi2_cdf(x: float, k: float, ncp: float) -> float:
    k = _check_df(k)
    if not x >= 0 or not ncp >= 0:
        raise DomainError(f"noncentral chi-square CDF needs x >= 0 and ncp >= 0, got {x}, {ncp}")
    if ncp == 0:
        return chi2_cdf(x, k)
    return float(stats.ncx2.cdf(float(x), k, float(ncp)))


def normal_cdf(x: float) -> float:
    return float(special.ndtr(float(x)))


# ── Statistics ───────────────────────────────────────────────────


def null_tilt(
    method: Method,
    model: MomentModel,
    sample: Sample,
    theta0: Any,
    opts: SolverOptions | None = None,
) -> TiltSolution:
    """Implied probabilities at ``theta0`` in the estimator's weight family.

    Raises :class:`NullInfeasible` when the tilt cannot be solved there.
    """
    opts = opts or SolverOptions()
    try:
        mm0 = evaluate_moments(model, sample, theta0)
        return tilt(method, mm0, opts.tol, opts.max_iter, hull_limit=opts.hull_limit)
    except NumericalError as exc:
        raise NullInfeasible(
            f"implied probabilities at theta0 are infeasible ({type(exc).__name__}: {exc})"
        ) from exc


def _uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _null(
    model: MomentModel,
    sample: Sample,
    theta0: Any,
    est: EstimatorResult,
    reference: TiltSolution | None,
    opts: SolverOptions | None,
) -> TiltSolution:
    if reference is not None:
        return reference
    return null_tilt(est.method, model, sample, theta0, opts)


def t_statistic(
    model: MomentModel,
    sample: Sample,
    theta0: Any,
    f: PhiFunction,
    est: EstimatorResult,
    *,
    reference: TiltSolution | None = None,
    opts: SolverOptions | None = None,
) -> float:
    """``(2n / phi''(1)) (D_phi(u, p(theta0)) - D_phi(u, p(theta_hat)))``."""
    p0 = _null(model, sample, theta0, est, reference, opts).weights
    u = _uniform(sample.n)
    diff = d_phi(u, p0, f) - d_phi(u, est.tilt.weights, f)
    return 2.0 * sample.n / f.dd1 * diff


def s_statistic(
    model: MomentModel,
    sample: Sample,
    theta0: Any,
    f: PhiFunction,
    est: EstimatorResult,
    *,
    reference: TiltSolution | None = None,
    opts: SolverOptions | None = None,
) -> float:
    """``(2n / phi''(1)) D_phi(p(theta_hat), p(theta0))``."""
    p0 = _null(model, sample, theta0, est, reference, opts).weights
    return 2.0 * sample.n / f.dd1 * d_phi(est.tilt.weights, p0, f)


def likelihood_ratio(
    model: MomentModel,
    sample: Sample,
    theta0: Any,
    est: EstimatorResult,
    *,
    reference: TiltSolution | None = None,
    opts: SolverOptions | None = None,
) -> float:
    """``2 sum log p_i(theta_hat) - 2 sum log p_i(theta0)``."""
    null = _null(model, sample, theta0, est, reference, opts)
    return 2.0 * float(np.sum(est.tilt.log_weights) - np.sum(null.log_weights))


def hphi_t_statistic(
    model: MomentModel,
    sample: Sample,
    theta0: Any,
    f: PhiFunction,
    est: EstimatorResult,
    h: HFunction,
    *,
    reference: TiltSolution | None = None,
    opts: SolverOptions | None = None,
) -> float:
    p0 = _null(model, sample, theta0, est, reference, opts).weights
    u = _uniform(sample.n)
    diff = h.h(d_phi(u, p0, f)) - h.h(d_phi(u, est.tilt.weights, f))
    return 2.0 * sample.n / (f.dd1 * h.dh0) * diff


def hphi_s_statistic(
    model: MomentModel,
    sample: Sample,
    theta0: Any,
    f: PhiFunction,
    est: EstimatorResult,
    h: HFunction,
    *,
    reference: TiltSolution | None = None,
    opts: SolverOptions | None = None,
) -> float:
    p0 = _null(model, sample, theta0, est, reference, opts).weights
    return 2.0 * sample.n / (f.dd1 * h.dh0) * h.h(d_phi(est.tilt.weights, p0, f))


def compute_statistic(
    family: Family | str,
    model: MomentModel,
    sample: Sample,
    theta0: Any,
    f: PhiFunction | None,
    est: EstimatorResult,
    h: HFunction | None = None,
    *,
    reference: TiltSolution | None = None,
    opts: SolverOptions | None = None,
) -> float:
    family = Family.parse(family)
    if family is Family.G2:
        return likelihood_ratio(model, sample, theta0, est, reference=reference, opts=opts)
    if f is None:
        raise ValueError(f"family {family.value} needs a phi function")
    if family is Family.T:
        return t_statistic(model, sample, theta0, f, est, reference=reference, opts=opts)
    if family is Family.S:
        return s_statistic(model, sample, theta0, f, est, reference=reference, opts=opts)
    if h is None:
        raise ValueError(f"family {family.value} needs an h function")
    if family is Family.T_H:
        return hphi_t_statistic(model, sample, theta0, f, est, h, reference=reference, opts=opts)
    return hphi_s_statistic(model, sample, theta0, f, est, h, reference=reference, opts=opts)


def decide(
    statistic: float,
    df: int,
    alpha: float,
    *,
    family: Family,
    estimator: Method,
    label: str,
    theta_hat: Any = (),
    theta0: Any = (),
) -> TestResult:
    critical = chi2_quantile(1.0 - alpha, df)
    return TestResult(
        statistic=float(statistic),
        df=int(df),
        p_value=chi2_sf(statistic, df),
        critical_value=critical,
        alpha=float(alpha),
        reject=bool(statistic > critical),
        family=family,
        estimator=estimator,
        lambda_or_phi=label,
        theta_hat=tuple(float(v) for v in np.atleast_1d(theta_hat)),
        theta0=tuple(float(v) for v in np.atleast_1d(theta0)),
    )


def run_simple_test(
    model: MomentModel,
    sample: Sample,
    theta0: Any,
    family: Family | str,
    f: PhiFunction | None,
    h_opt: HFunction | None,
    est_method: Method | str,
    alpha: float,
    *,
    init: Any = None,
    opts: SolverOptions | None = None,
    est: EstimatorResult | None = None,
) -> TestResult:
    """Estimate, compute the statistic, and compare with ``chi2_{p, alpha}``."""
    if not 0.0 < float(alpha) < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    family = Family.parse(family)
    method = Method.parse(est_method)
    opts = opts or SolverOptions()
    reference = null_tilt(method, model, sample, theta0, opts)
    if est is None:
        est = estimate(method, model, sample, init, opts)
    if family is Family.G2:
        f = kullback_phi()
    value = compute_statistic(
        family, model, sample, theta0, f, est, h_opt, reference=reference, opts=opts
    )
    label = f.label if f is not None else "kullback"
    if h_opt is not None and family in (Family.T_H, Family.S_H):
        label = f"{h_opt.label}/{label}"
    return decide(
        value,
        model.p,
        float(alpha),
        family=family,
        estimator=method,
        label=label,
        theta_hat=est.theta_hat,
        theta0=theta0,
    )
