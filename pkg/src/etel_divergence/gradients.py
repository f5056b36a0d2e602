"""Analytic theta-gradients of ET implied probabilities and of divergences built on them.

With ``w_i = exp(t'g_i) / mean_j exp(t'g_j)`` (so ``p_ET,i = w_i / n``)::

    dp_i/dtheta = (w_i / n) [G_i' t - mean(w G') t - K g_i]
    K = (mean(w G' t g') + mean(w G')) mean(w g g')^-1

The divergence gradients below evaluated at sample means are also the
plug-in limits used by the misspecification power approximations.
"""

from __future__ import annotations

from typing import Any

import numpy as np

from etel_divergence.config import SolverOptions
from etel_divergence.divergence import PhiFunction, kullback_phi
from etel_divergence.errors import SingularMoments
from etel_divergence.models import Method
from etel_divergence.moments import MomentMatrix, MomentModel, Sample, as_theta, evaluate_moments
from etel_divergence.tilting import TiltSolution, solve_et_multiplier


def _solve_sym(matrix: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        cond = np.linalg.cond(matrix)
    except np.linalg.LinAlgError as exc:
        raise SingularMoments(f"{what} is singular") from exc
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularMoments(f"{what} is numerically singular (cond={cond:.3g})")
    return np.linalg.solve(matrix, rhs)


def tilt_sensitivity(
    mm: MomentMatrix, tilt: TiltSolution, jac: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(K, mean(w G'))`` for the ET tilt; ``K`` is ``p x r``."""
    g = mm.values
    w = tilt.weights * mm.n
    t = tilt.t
    # G_i' t for each row: n x p
    gt = np.einsum("nrp,r->np", jac, t)
    mean_wgt = np.einsum("n,nrp->pr", w, jac) / mm.n
    mean_wgtg = np.einsum("n,np,nr->pr", w, gt, g) / mm.n
    a = (g * w[:, None]).T @ g / mm.n
    k = _solve_sym(a, (mean_wgtg + mean_wgt).T, "mean(w g g')").T
    return k, mean_wgt


def weight_gradient(
    mm: MomentMatrix,
    tilt: TiltSolution,
    model: MomentModel,
    sample: Sample,
    theta: Any,
) -> np.ndarray:
    """``n x p`` matrix whose row ``i`` is ``dp_ET,i / dtheta``."""
    th = as_theta(theta, model.p)
    jac = model.jacobians(sample.data, th)
    k, mean_wgt = tilt_sensitivity(mm, tilt, jac)
    w = tilt.weights * mm.n
    gt = np.einsum("nrp,r->np", jac, tilt.t)
    inner = gt - (mean_wgt @ tilt.t)[None, :] - mm.values @ k.T
    return (w / mm.n)[:, None] * inner


def dphi_u_gradient(
    mm: MomentMatrix,
    tilt: TiltSolution,
    model: MomentModel,
    sample: Sample,
    theta: Any,
    f: PhiFunction,
) -> np.ndarray:
    """Gradient of ``D_phi(u, p_ET(theta))``: ``sum_i psi(1 / w_i) dp_i/dtheta``."""
    rows = weight_gradient(mm, tilt, model, sample, theta)
    w = tilt.weights * mm.n
    return np.asarray(f.psi(1.0 / w), dtype=float) @ rows


def dphi_pp_gradient(
    mm: MomentMatrix,
    tilt: TiltSolution,
    model: MomentModel,
    sample: Sample,
    theta: Any,
    theta0: Any,
    f: PhiFunction,
    *,
    reference: TiltSolution | None = None,
    opts: SolverOptions | None = None,
) -> np.ndarray:
    """Gradient in ``theta`` of ``D_phi(p_ET(theta), p_ET(theta0))``.

    ``sum_i phi'(p_i(theta) / p_i(theta0)) dp_i/dtheta``; ``reference`` is the
    tilt at ``theta0`` when already known.
    """
    if reference is None:
        opts = opts or SolverOptions()
        mm0 = evaluate_moments(model, sample, theta0)
        reference = solve_et_multiplier(mm0, opts.tol, opts.max_iter, hull_limit=opts.hull_limit)
    rows = weight_gradient(mm, tilt, model, sample, theta)
    ratio = tilt.weights / reference.weights
    return np.asarray(f.dphi(ratio), dtype=float) @ rows


def criterion_gradient(
    method: Method,
    model: MomentModel,
    sample: Sample,
    theta: Any,
    opts: SolverOptions,
) -> np.ndarray:
    """Analytic gradient of the ET or ETEL outer criterion."""
    if method is Method.EL:
        raise ValueError("analytic criterion gradient is only available for ET weights")
    mm = evaluate_moments(model, sample, theta)
    sol = solve_et_multiplier(mm, opts.tol, opts.max_iter, hull_limit=opts.hull_limit)
    if method is Method.ETEL:
        return dphi_u_gradient(mm, sol, model, sample, theta, kullback_phi())
    rows = weight_gradient(mm, sol, model, sample, theta)
    return (sol.log_weights + np.log(mm.n)) @ rows
