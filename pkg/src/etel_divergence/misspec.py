"""Misspecification asymptotics of the ETEL estimator and the divergence tests.

The ETEL estimator is embedded in the just-identified system
``mean phi(X_i, beta) = 0`` with ``beta = (theta, t, kappa, tau)``::

    phi1 = e G'(kappa + t g'kappa - t) + tau G't
    phi2 = (tau - e) g + e g g'kappa
    phi3 = e g
    phi4 = e - tau

where ``e = exp(t'g)``. Its sandwich ``Gamma^-1 Phi Gamma^-T`` gives the
spread of ``sqrt(n) theta_hat`` when no parameter solves the moments.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.special import logsumexp

from etel_divergence.asymptotics import power_nu
from etel_divergence.config import SolverOptions
from etel_divergence.divergence import PhiFunction, d_phi, kullback_phi
from etel_divergence.errors import SingularGamma, SingularMoments
from etel_divergence.estimators import EstimatorResult
from etel_divergence.gradients import dphi_pp_gradient, dphi_u_gradient, tilt_sensitivity
from etel_divergence.inference import normal_cdf
from etel_divergence.models import Family, Method
from etel_divergence.moments import (
    MomentModel,
    Sample,
    as_theta,
    evaluate_moments,
    fd_step,
    sample_s12,
)
from etel_divergence.tilting import solve_et_multiplier

logger = logging.getLogger(__name__)

COND_LIMIT = 1e12
RESIDUAL_SLACK = 100.0


@dataclass(frozen=True)
class JointPseudoValue:
    theta: np.ndarray
    t: np.ndarray
    kappa: np.ndarray
    tau_scalar: float

    @property
    def size(self) -> int:
        return self.theta.size + self.t.size + self.kappa.size + 1

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.theta, self.t, self.kappa, [self.tau_scalar]])

    @classmethod
    def from_stacked(cls, beta: Any, p: int, r: int) -> JointPseudoValue:
        vec = np.asarray(beta, dtype=float).reshape(-1)
        if vec.size != p + 2 * r + 1:
            raise ValueError(f"beta must have length {p + 2 * r + 1}, got {vec.size}")
        return cls(
            theta=vec[:p].copy(),
            t=vec[p : p + r].copy(),
            kappa=vec[p + r : p + 2 * r].copy(),
            tau_scalar=float(vec[-1]),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "theta": self.theta.tolist(),
            "t": self.t.tolist(),
            "kappa": self.kappa.tolist(),
            "tau": self.tau_scalar,
        }


@dataclass(frozen=True)
class MisspecLaw:
    """Sandwich pieces; the power fields are filled by :func:`misspec_power`."""

    Gamma: np.ndarray
    Phi: np.ndarray
    Sigma_theta: np.ndarray
    r_or_q: np.ndarray | None = None
    mu_star: float | None = None
    nu: float | None = None
    beta_star: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "Gamma": self.Gamma.tolist(),
            "Phi": self.Phi.tolist(),
            "Sigma_theta": self.Sigma_theta.tolist(),
            "r_or_q": None if self.r_or_q is None else self.r_or_q.tolist(),
            "mu_star": self.mu_star,
            "nu": self.nu,
            "beta_star": self.beta_star,
        }


# ── Estimating system ────────────────────────────────────────────


def estimating_rows(model: MomentModel, sample: Sample, beta: JointPseudoValue) -> np.ndarray:
    """``n x (p + 2r + 1)`` matrix of ``phi(X_i, beta)``."""
    theta = as_theta(beta.theta, model.p)
    g = evaluate_moments(model, sample, theta).values
    jac = model.jacobians(sample.data, theta)
    t, kappa, tau = beta.t, beta.kappa, beta.tau_scalar
    e = np.exp(g @ t)
    gk = g @ kappa
    inner = kappa[None, :] + gk[:, None] * t[None, :] - t[None, :]
    phi1 = e[:, None] * np.einsum("nrp,nr->np", jac, inner) + tau * np.einsum(
        "nrp,r->np", jac, t
    )
    phi2 = (tau - e)[:, None] * g + (e * gk)[:, None] * g
    phi3 = e[:, None] * g
    phi4 = (e - tau)[:, None]
    return np.hstack([phi1, phi2, phi3, phi4])


def misspec_fit(
    model: MomentModel,
    sample: Sample,
    est: EstimatorResult,
    opts: SolverOptions | None = None,
) -> JointPseudoValue:
    """Complete an ETEL fit to ``beta_hat = (theta_hat, t_hat, kappa_hat, tau_hat)``.

    A joint residual above ``RESIDUAL_SLACK`` times the looser of the inner
    and outer tolerances is logged as a warning.
    """
    opts = opts or SolverOptions()
    if est.method is not Method.ETEL:
        raise ValueError(f"misspecification analysis needs an ETEL fit, got {est.method.value}")
    theta = est.theta_hat
    g = evaluate_moments(model, sample, theta).values
    t = est.tilt.t
    e = np.exp(g @ t)
    tau = float(e.mean())
    a_e = (g * e[:, None]).T @ g / sample.n
    rhs = tau * g.mean(axis=0) - (e @ g) / sample.n
    cond = np.linalg.cond(a_e)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMoments(f"mean(e g g') is numerically singular (cond={cond:.3g})")
    kappa = -np.linalg.solve(a_e, rhs)
    beta = JointPseudoValue(theta=theta.copy(), t=t.copy(), kappa=kappa, tau_scalar=tau)
    residual = float(np.max(np.abs(estimating_rows(model, sample, beta).mean(axis=0))))
    limit = RESIDUAL_SLACK * max(opts.tol, opts.outer_tol)
    if residual > limit:
        logger.warning(
            "joint estimating residual %.3g at beta_hat exceeds %.3g; the ETEL fit may not "
            "have converged",
            residual,
            limit,
        )
    else:
        logger.debug("joint estimating residual at beta_hat: %.3g", residual)
    return beta


def misspec_sandwich(model: MomentModel, sample: Sample, beta: JointPseudoValue) -> MisspecLaw:
    """``Gamma`` by central differences, ``Phi`` as the mean outer product."""
    rows = estimating_rows(model, sample, beta)
    phi = rows.T @ rows / sample.n
    phi = 0.5 * (phi + phi.T)

    base = beta.stacked()
    p, r = model.p, model.r
    k = base.size
    gamma = np.empty((k, k))
    for j in range(k):
        h = fd_step(base[j])
        up, down = base.copy(), base.copy()
        up[j] += h
        down[j] -= h
        f_up = estimating_rows(model, sample, JointPseudoValue.from_stacked(up, p, r))
        f_down = estimating_rows(model, sample, JointPseudoValue.from_stacked(down, p, r))
        gamma[:, j] = (f_up.mean(axis=0) - f_down.mean(axis=0)) / (2.0 * h)

    try:
        cond = np.linalg.cond(gamma)
    except np.linalg.LinAlgError as exc:
        raise SingularGamma("Gamma is singular") from exc
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularGamma(f"Gamma is numerically singular (cond={cond:.3g})")
    gamma_inv = np.linalg.inv(gamma)
    full = gamma_inv @ phi @ gamma_inv.T
    sigma = full[:p, :p]
    return MisspecLaw(Gamma=gamma, Phi=phi, Sigma_theta=0.5 * (sigma + sigma.T))


# ── Power under misspecification ─────────────────────────────────


def _g2_gradient(
    model: MomentModel, sample: Sample, theta: np.ndarray, opts: SolverOptions
) -> np.ndarray:
    """``K gbar + (mean(w G') - S12') t`` at ``theta``."""
    mm = evaluate_moments(model, sample, theta)
    sol = solve_et_multiplier(mm, opts.tol, opts.max_iter, hull_limit=opts.hull_limit)
    jac = model.jacobians(sample.data, theta)
    k, mean_wgt = tilt_sensitivity(mm, sol, jac)
    s12 = sample_s12(model, sample, theta)
    return k @ mm.values.mean(axis=0) + (mean_wgt - s12.T) @ sol.t


def _log_mean_exp(values: np.ndarray) -> float:
    return float(logsumexp(values) - np.log(values.size))


def misspec_power(
    statistic_family: Family | str,
    model: MomentModel,
    sample: Sample,
    theta0: Any,
    beta: JointPseudoValue,
    f: PhiFunction | None,
    n_eval: int,
    alpha: float,
    *,
    law: MisspecLaw | None = None,
    opts: SolverOptions | None = None,
) -> MisspecLaw:
    """Normal power approximation for T, S or G2 when the model is misspecified.

    ``mu_star`` is the limit of ``phi''(1) * statistic / (2n)``.
    """
    family = Family.parse(statistic_family)
    if family not in (Family.T, Family.S, Family.G2):
        raise ValueError(f"misspecified power is available for t, s and g2, got {family.value}")
    if not 0.0 < float(alpha) < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    opts = opts or SolverOptions()
    law = law or misspec_sandwich(model, sample, beta)
    theta_star = as_theta(beta.theta, model.p)
    n = sample.n
    uniform = np.full(n, 1.0 / n)

    mm_star = evaluate_moments(model, sample, theta_star)
    tilt_star = solve_et_multiplier(mm_star, opts.tol, opts.max_iter, hull_limit=opts.hull_limit)
    mm0 = evaluate_moments(model, sample, theta0)
    tilt0 = solve_et_multiplier(mm0, opts.tol, opts.max_iter, hull_limit=opts.hull_limit)

    if family is Family.G2 or f is None:
        f = kullback_phi()
    if family is Family.T:
        grad = dphi_u_gradient(mm_star, tilt_star, model, sample, theta_star, f)
        mu = d_phi(uniform, tilt0.weights, f) - d_phi(uniform, tilt_star.weights, f)
    elif family is Family.S:
        grad = dphi_pp_gradient(
            mm_star, tilt_star, model, sample, theta_star, theta0, f, reference=tilt0
        )
        mu = d_phi(tilt_star.weights, tilt0.weights, f)
    else:
        grad = _g2_gradient(model, sample, theta_star, opts)
        lin_star = mm_star.values @ tilt_star.t
        lin0 = mm0.values @ tilt0.t
        mu = (
            _log_mean_exp(lin0)
            - _log_mean_exp(lin_star)
            + float(np.mean(lin_star - lin0))
        )

    quad = float(grad @ law.Sigma_theta @ grad)
    nu = power_nu(quad, int(n_eval), float(mu), f.dd1, model.p, float(alpha))
    return dataclasses.replace(
        law,
        r_or_q=np.asarray(grad, dtype=float),
        mu_star=float(mu),
        nu=nu,
        beta_star=1.0 - normal_cdf(nu),
    )
