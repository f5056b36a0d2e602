"""Asymptotics: sandwich blocks, power approximations and influence functions.

Population expectations are replaced by sample means throughout. The
builtin model additionally has closed forms for the fixed-alternative
T-family power with ``theta0 = 0`` and ``delta = 1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from etel_divergence.config import SolverOptions
from etel_divergence.divergence import PhiFunction, d_phi
from etel_divergence.errors import (
    DomainError,
    EtelError,
    PoleEncountered,
    RankDeficient,
    SingularMoments,
    SingularV,
)
from etel_divergence.estimators import estimate
from etel_divergence.inference import chi2_quantile, noncentral_chi2_cdf, normal_cdf
from etel_divergence.models import Method
from etel_divergence.moments import (
    MomentMatrix,
    MomentModel,
    Sample,
    as_theta,
    evaluate_moments,
    sample_s11,
    sample_s12,
)
from etel_divergence.tilting import solve_et_multiplier

logger = logging.getLogger(__name__)

COND_LIMIT = 1e12
POLE_TOL = 1e-14
POLE_WARN = 1e-3


@dataclass(frozen=True)
class SandwichBlocks:
    S11: np.ndarray
    S12: np.ndarray
    V: np.ndarray
    R: np.ndarray

    def to_dict(self) -> dict[str, Any]:
        return {
            "S11": self.S11.tolist(),
            "S12": self.S12.tolist(),
            "V": self.V.tolist(),
            "R": self.R.tolist(),
        }


@dataclass(frozen=True)
class FixedAltApprox:
    """Normal approximation to the power at a fixed alternative.

    ``beta_star = 1 - Phi(nu)``.
    """

    tau: np.ndarray
    mu: float
    s: np.ndarray
    M: np.ndarray
    nu: float
    beta_star: float

    @property
    def quadratic(self) -> float:
        return float(self.s @ self.M @ self.s)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tau": self.tau.tolist(),
            "mu": self.mu,
            "s": self.s.tolist(),
            "M": self.M.tolist(),
            "nu": self.nu,
            "beta_star": self.beta_star,
        }


# ── Linear algebra helpers ───────────────────────────────────────


def _inv(matrix: np.ndarray, what: str, error: type[EtelError] = SingularMoments) -> np.ndarray:
    try:
        cond = np.linalg.cond(matrix)
    except np.linalg.LinAlgError as exc:
        raise error(f"{what} is singular") from exc
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise error(f"{what} is numerically singular (cond={cond:.3g})")
    return np.linalg.inv(matrix)


def _sym(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


# ── Sandwich blocks ──────────────────────────────────────────────


def blocks_from_parts(s11: np.ndarray, s12: np.ndarray) -> SandwichBlocks:
    """Assemble ``V = (S12' S11^-1 S12)^-1`` and ``R = S11^-1 - S11^-1 S12 V S12' S11^-1``."""
    s11 = np.atleast_2d(np.asarray(s11, dtype=float))
    s12 = np.atleast_2d(np.asarray(s12, dtype=float))
    r, p = s12.shape
    if s11.shape != (r, r):
        raise ValueError(f"S11 must be {r}x{r}, got {s11.shape}")
    if np.linalg.matrix_rank(s12) < p:
        raise RankDeficient(f"S12 has rank < p={p}")
    s11_inv = _inv(s11, "S11")
    v = _sym(_inv(s12.T @ s11_inv @ s12, "S12' S11^-1 S12"))
    proj = s11_inv @ s12
    big_r = _sym(s11_inv - proj @ v @ proj.T)
    return SandwichBlocks(S11=s11, S12=s12, V=v, R=big_r)


def sandwich_blocks(model: MomentModel, sample: Sample, theta: Any) -> SandwichBlocks:
    """Plug-in ``S11``, ``S12``, ``V`` and ``R`` at ``theta``."""
    mm = evaluate_moments(model, sample, theta)
    return blocks_from_parts(sample_s11(mm), sample_s12(model, sample, theta))


def solve_tau(mm_at_theta0: MomentMatrix, opts: SolverOptions | None = None) -> np.ndarray:
    """Plug-in ``tau`` with ``mean(exp(tau'g) g) = 0``; the ET multiplier at theta0."""
    opts = opts or SolverOptions()
    sol = solve_et_multiplier(
        mm_at_theta0, opts.tol, opts.max_iter, hull_limit=opts.hull_limit
    )
    return sol.t


# ── Fixed alternatives ───────────────────────────────────────────


def power_nu(quad: float, n_eval: int, mu: float, dd1: float, df: int, alpha: float) -> float:
    """``sqrt(n) (phi''(1) chi2_{df,alpha} / (2n) - mu) / sqrt(quad)``."""
    crit = chi2_quantile(1.0 - alpha, df)
    gap = dd1 * crit / (2.0 * n_eval) - mu
    if not quad > 0:
        # degenerate spread: the statistic concentrates at mu
        if gap == 0:
            return 0.0
        return float(np.copysign(np.inf, gap))
    return float(np.sqrt(n_eval) * gap / np.sqrt(quad))


def _check_alpha(alpha: float, n_eval: int) -> None:
    if not 0.0 < float(alpha) < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if int(n_eval) < 1:
        raise ValueError(f"n_eval must be >= 1, got {n_eval}")


def _null_parts(
    model: MomentModel, sample: Sample, theta0: Any, opts: SolverOptions | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(tau, w, g0)`` with ``w = exp(tau'g0) / mean(exp(tau'g0))``."""
    mm0 = evaluate_moments(model, sample, theta0)
    opts = opts or SolverOptions()
    sol = solve_et_multiplier(mm0, opts.tol, opts.max_iter, hull_limit=opts.hull_limit)
    return sol.t, sol.weights * mm0.n, mm0.values


def power_approx_t(
    model: MomentModel,
    sample: Sample,
    theta0: Any,
    theta_star: Any,
    f: PhiFunction,
    n_eval: int,
    alpha: float,
    *,
    opts: SolverOptions | None = None,
) -> FixedAltApprox:
    """T-family power at ``n_eval`` observations; ``sample`` is drawn under ``theta_star``."""
    _check_alpha(alpha, n_eval)
    as_theta(theta_star, model.p)
    tau, w, g0 = _null_parts(model, sample, theta0, opts)
    n = sample.n
    inv_w = 1.0 / w
    s = (w * np.asarray(f.psi(inv_w), dtype=float)) @ g0 / n
    a_inv = _inv(_sym((g0 * w[:, None]).T @ g0 / n), "mean(exp(tau'g) g g')")
    b = _sym((g0 * (w * w)[:, None]).T @ g0 / n)
    m = _sym(a_inv @ b @ a_inv)
    mu = d_phi(np.full(n, 1.0 / n), w / n, f)
    quad = float(s @ m @ s)
    nu = power_nu(quad, int(n_eval), mu, f.dd1, model.p, alpha)
    return FixedAltApprox(tau=tau, mu=mu, s=s, M=m, nu=nu, beta_star=1.0 - normal_cdf(nu))


def power_approx_s(
    model: MomentModel,
    sample: Sample,
    theta0: Any,
    theta_star: Any,
    f: PhiFunction,
    n_eval: int,
    alpha: float,
    *,
    opts: SolverOptions | None = None,
) -> FixedAltApprox:
    """S-family power; ``s1`` uses ``R(theta*)`` and ``g(X, theta*)``, ``s2`` the null tilt."""
    _check_alpha(alpha, n_eval)
    tau, w, g0 = _null_parts(model, sample, theta0, opts)
    n = sample.n
    g_star = evaluate_moments(model, sample, theta_star).values
    blocks = sandwich_blocks(model, sample, theta_star)
    inv_w = 1.0 / w
    s1 = -blocks.R @ (np.asarray(f.dphi(inv_w), dtype=float) @ g_star / n)
    a_inv = _inv(_sym((g0 * w[:, None]).T @ g0 / n), "mean(exp(tau'g) g g')")
    s2 = -a_inv @ ((w * np.asarray(f.psi(inv_w), dtype=float)) @ g0 / n)
    sigma12 = (g_star * w[:, None]).T @ g0 / n
    sigma22 = _sym((g0 * (w * w)[:, None]).T @ g0 / n)
    m = np.block([[blocks.S11, sigma12], [sigma12.T, sigma22]])
    s = np.concatenate([s1, s2])
    mu = d_phi(np.full(n, 1.0 / n), w / n, f)
    quad = float(s @ m @ s)
    nu = power_nu(quad, int(n_eval), mu, f.dd1, model.p, alpha)
    return FixedAltApprox(tau=tau, mu=mu, s=s, M=m, nu=nu, beta_star=1.0 - normal_cdf(nu))


# ── Closed forms for the builtin model (theta0 = 0, delta = 1) ───


def _closed_form_base(lam: float, theta_star: float) -> tuple[float, float, float]:
    lam = float(lam)
    th2 = float(theta_star) ** 2
    margin = 1.0 - lam * th2
    if not margin > 0:
        raise DomainError(f"closed form needs 1 - lambda*theta*^2 > 0, got {margin:g}")
    return lam, th2, margin


def closed_form_mu_t(lam: float, theta_star: float) -> float:
    lam, th2, margin = _closed_form_base(lam, theta_star)
    if abs(lam) < 1e-8:
        return th2 - 0.5 * np.log1p(th2)
    if abs(lam + 1.0) < 1e-8:
        return 0.5 * np.log1p(th2)
    scale = lam * (lam + 1.0)
    moment = np.exp(scale * th2 / (2.0 * margin)) / np.sqrt(margin * (1.0 + th2) ** lam)
    return float((moment - 1.0) / scale)


def closed_form_quadratic_t(lam: float, theta_star: float) -> float:
    """Closed form of ``s' M s`` for the T family."""
    lam, th2, margin = _closed_form_base(lam, theta_star)
    th = float(theta_star)
    k = 2.0 * th2 + 1.0
    lead = th2 * np.exp(th2 * (lam * (lam + 1.0) / margin + 1.0 / k))
    lead /= np.sqrt(k**5) * margin**3 * (th2 + 1.0) ** (lam - 1.0)
    off = -th / k * (th2 * th2 + 3.0 * th2 + 1.0)
    q = np.array(
        [
            [2.0 * th2 * th2 + 4.0 * th2 + 1.0, off],
            [off, (6.0 * th2**4 + 16.0 * th2**3 + 19.0 * th2**2 + 8.0 * th2 + 1.0) / (2.0 * k * k)],
        ]
    )
    v = np.array([1.0, (lam + 2.0) * th])
    return float(lead * (v @ q @ v))


def closed_form_approx_t(
    lam: float, theta_star: float, n: int, alpha: float
) -> tuple[float, float, float]:
    """Return ``(mu, nu, beta*)`` from the closed forms."""
    _check_alpha(alpha, n)
    mu = closed_form_mu_t(lam, theta_star)
    quad = closed_form_quadratic_t(lam, theta_star)
    nu = power_nu(quad, int(n), mu, 1.0, 1, alpha)
    return float(mu), nu, 1.0 - normal_cdf(nu)


def closed_form_power_t(lam: float, theta_star: float, n: int, alpha: float) -> float:
    """``1 - Phi(nu)`` with ``nu = (s'Ms / n)^(-1/2) (chi2_{1,alpha} / (2n) - mu)``."""
    return closed_form_approx_t(lam, theta_star, n, alpha)[2]


# ── Contiguous alternatives ──────────────────────────────────────


def contiguous_power(blocks: SandwichBlocks, Delta: Any, alpha: float) -> float:
    """``1 - F_{chi2_p(delta)}(chi2_{p,alpha})`` with ``delta = Delta' V^-1 Delta``."""
    p = blocks.V.shape[0]
    delta_vec = as_theta(Delta, p)
    v_inv = _inv(blocks.V, "V", SingularV)
    ncp = max(float(delta_vec @ v_inv @ delta_vec), 0.0)
    crit = chi2_quantile(1.0 - float(alpha), p)
    return 1.0 - noncentral_chi2_cdf(crit, p, ncp)


# ── Influence functions ──────────────────────────────────────────


def _at_point(model: MomentModel, x_row: Any, theta: Any) -> tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(x_row, dtype=float))
    if x.shape != (1, model.d):
        x = x.reshape(1, -1)
    if x.shape[1] != model.d:
        raise ValueError(f"x must have {model.d} component(s), got {x.shape[1]}")
    th = as_theta(theta, model.p)
    return model.moments(x, th)[0], model.jacobians(x, th)[0]


def influence_rho(
    method: Method | str,
    model: MomentModel,
    x_row: Any,
    theta: Any,
    t: Any,
    mean_exp: float = 1.0,
) -> np.ndarray:
    """Estimating-equation kernel of each estimator at one point ``x``.

    EL: ``t'G / (1 + t'g)``; ET: ``t'G exp(t'g)``;
    ETEL: ``t'G (exp(t'g) - mean_exp)``.
    """
    method = Method.parse(method)
    g, jac = _at_point(model, x_row, theta)
    t = as_theta(t, model.r)
    tg = t @ jac
    lin = float(t @ g)
    if method is Method.EL:
        denom = 1.0 + lin
        if abs(denom) <= POLE_TOL:
            raise PoleEncountered(f"1 + t'g(x) = {denom:.3g} at the EL influence kernel")
        return tg / denom
    if method is Method.ET:
        return tg * np.exp(lin)
    return tg * (np.exp(lin) - float(mean_exp))


def influence_of_estimator(blocks: SandwichBlocks, g_at_x: Any) -> np.ndarray:
    """Limiting influence function ``V S12' S11^-1 g(x)``."""
    g = np.asarray(g_at_x, dtype=float).reshape(-1)
    s11_inv = _inv(blocks.S11, "S11")
    return blocks.V @ blocks.S12.T @ s11_inv @ g


def if2_s(blocks: SandwichBlocks, g_at_x: Any, *, via_influence: bool = False) -> float:
    """Second-order influence of the S statistics, ``g' S11^-1 S12 V S12' S11^-1 g``.

    ``via_influence`` evaluates the same value as ``IF' V^-1 IF``.
    """
    g = np.asarray(g_at_x, dtype=float).reshape(-1)
    if via_influence:
        infl = influence_of_estimator(blocks, g)
        return float(infl @ _inv(blocks.V, "V", SingularV) @ infl)
    s11_inv = _inv(blocks.S11, "S11")
    proj = s11_inv @ blocks.S12
    return float(g @ proj @ blocks.V @ proj.T @ g)


@dataclass(frozen=True)
class InfluenceReport:
    x: tuple[float, ...]
    theta0: tuple[float, ...]
    rho: dict[str, list[float] | None]
    theta_hat: dict[str, list[float]]
    if2: float
    estimator_influence: list[float]
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "x": list(self.x),
            "theta0": list(self.theta0),
            "rho": self.rho,
            "theta_hat": self.theta_hat,
            "if2": self.if2,
            "estimator_influence": self.estimator_influence,
            "warnings": list(self.warnings),
        }


def influence_report(
    model: MomentModel,
    sample: Sample,
    theta0: Any,
    x: Any,
    options: SolverOptions | None = None,
) -> InfluenceReport:
    """Evaluate every influence quantity at the point ``x``."""
    opts = options or SolverOptions()
    rho: dict[str, list[float] | None] = {}
    theta_hat: dict[str, list[float]] = {}
    warnings: list[str] = []
    for method in (Method.EL, Method.ET, Method.ETEL):
        est = estimate(method, model, sample, None if model.p == model.d else theta0, opts)
        theta_hat[method.value] = est.theta_hat.tolist()
        t = est.tilt.t
        mean_exp = 1.0
        if method is Method.ETEL:
            mm = evaluate_moments(model, sample, est.theta_hat)
            mean_exp = float(np.mean(np.exp(mm.values @ t)))
        if method is Method.EL:
            g_x, _ = _at_point(model, x, est.theta_hat)
            denom = 1.0 + float(t @ g_x)
            if abs(denom) < POLE_WARN:
                warnings.append(f"EL kernel near its pole: 1 + t'g(x) = {denom:.3g}")
        try:
            value = influence_rho(method, model, x, est.theta_hat, t, mean_exp)
        except PoleEncountered as exc:
            logger.warning("%s", exc)
            warnings.append(str(exc))
            rho[method.value] = None
            continue
        rho[method.value] = np.asarray(value, dtype=float).tolist()

    blocks = sandwich_blocks(model, sample, theta0)
    g0_x, _ = _at_point(model, x, theta0)
    return InfluenceReport(
        x=tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float))),
        theta0=tuple(as_theta(theta0, model.p).tolist()),
        rho=rho,
        theta_hat=theta_hat,
        if2=if2_s(blocks, g0_x),
        estimator_influence=influence_of_estimator(blocks, g0_x).tolist(),
        warnings=warnings,
    )
