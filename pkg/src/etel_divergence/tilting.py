"""Inner solvers: EL / ET Lagrange multipliers and implied probabilities."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from etel_divergence.errors import HullFailure, SingularMoments
from etel_divergence.models import Method
from etel_divergence.moments import MomentMatrix, mean_moments

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100
HULL_LIMIT = 1e6
ARMIJO_C = 1e-4
ARMIJO_SHRINK = 0.5
MAX_BACKTRACKS = 60
SINGULAR_RATIO = 1e-12
# Round-off allowance for the dual value once the Newton step is tiny.
_FLAT_SLACK = 1e-13


@dataclass(frozen=True)
class TiltSolution:
    """Lagrange multiplier plus implied probabilities at one ``theta``."""

    t: np.ndarray
    weights: np.ndarray
    method: Method
    iterations: int
    residual_norm: float
    converged: bool
    log_weights: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))
    dual_path: tuple[float, ...] = field(repr=False, default=())

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method.value,
            "t": self.t.tolist(),
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "converged": self.converged,
        }


def _check_tol(tol: float, max_iter: int) -> None:
    if not tol > 0:
        raise ValueError("tol must be > 0")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")


def _is_singular(matrix: np.ndarray) -> bool:
    eig = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))
    top = float(eig[-1])
    return top <= 0 or float(eig[0]) <= SINGULAR_RATIO * top


# ── Exponential tilting ──────────────────────────────────────────


def et_weights(mm: MomentMatrix, t: Any) -> np.ndarray:
    """``p_i = exp(t'g_i) / sum_j exp(t'g_j)`` with max-shift."""
    return softmax(mm.values @ np.asarray(t, dtype=float).reshape(-1))


def _log_dual(g: np.ndarray, t: np.ndarray) -> float:
    # log K(t) = log((1/n) sum exp(t'g_i))
    return float(logsumexp(g @ t) - np.log(g.shape[0]))


def solve_et_multiplier(
    mm: MomentMatrix,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    hull_limit: float = HULL_LIMIT,
) -> TiltSolution:
    """Minimise the convex dual ``K(t) = (1/n) sum exp(t'g_i)`` by damped Newton.

    Convergence is measured on the tilted estimating system
    ``||sum_i p_i g_i||_inf`` which is the same root as ``grad K = 0`` but stays
    on a fixed scale as ``K`` shrinks.

    Raises
    ------
    SingularMoments
        If ``(1/n) sum g_i g_i^T`` is numerically singular at the start.
    HullFailure
        If the multiplier diverges, the line search stalls, or ``max_iter``
        is exhausted, which happens when zero is not inside the convex hull
        of the rows.
    """
    _check_tol(tol, max_iter)
    g = mm.values
    t = np.zeros(mm.r)
    log_k = _log_dual(g, t)
    path = [log_k]
    residual = np.inf

    for iteration in range(max_iter + 1):
        w = softmax(g @ t)
        m = w @ g
        residual = float(np.max(np.abs(m)))
        if residual <= tol:
            log_w = log_softmax(g @ t)
            weights = np.exp(log_w)
            if np.any(weights <= 0):
                raise HullFailure("ET implied probabilities underflowed to zero")
            logger.debug("ET converged: iter=%d residual=%.3e", iteration, residual)
            return TiltSolution(
                t=t,
                weights=weights,
                method=Method.ET,
                iterations=iteration,
                residual_norm=residual,
                converged=True,
                log_weights=log_w,
                dual_path=tuple(path),
            )
        if iteration == max_iter:
            break

        hess = (g * w[:, None]).T @ g
        if _is_singular(hess):
            if iteration == 0:
                raise SingularMoments("sample moment matrix (1/n) sum g g^T is singular")
            raise HullFailure("ET dual Hessian degenerated; zero is on the hull boundary")
        direction = -np.linalg.solve(hess, m)
        slope = float(m @ direction)

        alpha = 1.0
        for _ in range(MAX_BACKTRACKS):
            candidate = t + alpha * direction
            new_log_k = _log_dual(g, candidate)
            armijo = new_log_k - log_k <= np.log1p(ARMIJO_C * alpha * slope)
            flat = new_log_k - log_k <= _FLAT_SLACK * max(1.0, abs(log_k))
            if armijo or (alpha == 1.0 and flat and _tilted_norm(g, candidate) < residual):
                break
            alpha *= ARMIJO_SHRINK
        else:
            raise HullFailure(f"ET line search stalled at residual {residual:.3e}")

        t = candidate
        log_k = new_log_k
        path.append(log_k)
        if np.max(np.abs(t)) > hull_limit:
            raise HullFailure(f"ET multiplier diverged (|t|_inf > {hull_limit:g})")

    raise HullFailure(
        f"ET solver reached max_iter={max_iter} with residual {residual:.3e}"
    )


def _tilted_norm(g: np.ndarray, t: np.ndarray) -> float:
    return float(np.max(np.abs(softmax(g @ t) @ g)))


def etel_loglik(
    mm: MomentMatrix,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    tilt: TiltSolution | None = None,
) -> float:
    """ETEL profile log-likelihood ``-log((1/n) sum exp(t'(g_i - gbar)))``.

    This is the per-observation value: ``n * etel_loglik`` equals
    ``sum log p_ET,i + n log n``.
    """
    if tilt is None:
        tilt = solve_et_multiplier(mm, tol, max_iter)
    gbar = mean_moments(mm)
    return -(_log_dual(mm.values, tilt.t) - float(tilt.t @ gbar))


# ── Empirical likelihood ─────────────────────────────────────────


def el_weights(mm: MomentMatrix, t: Any) -> np.ndarray:
    """``p_i = (1/n) / (1 + t'g_i)`` renormalised to sum to one."""
    denom = 1.0 + mm.values @ np.asarray(t, dtype=float).reshape(-1)
    raw = (1.0 / mm.n) / denom
    return raw / raw.sum()


def solve_el_multiplier(
    mm: MomentMatrix,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    hull_limit: float = HULL_LIMIT,
) -> TiltSolution:
    """Solve ``(1/n) sum g_i / (1 + t'g_i) = 0`` by Newton with step halving.

    Each accepted step keeps ``1 + t'g_i > 1/n`` for every row and does not
    decrease ``(1/n) sum log(1 + t'g_i)``.
    """
    _check_tol(tol, max_iter)
    g = mm.values
    n = mm.n
    floor = 1.0 / n
    t = np.zeros(mm.r)
    objective = 0.0
    residual = np.inf

    for iteration in range(max_iter + 1):
        denom = 1.0 + g @ t
        grad = (g / denom[:, None]).mean(axis=0)
        residual = float(np.max(np.abs(grad)))
        if residual <= tol:
            weights = (1.0 / n) / denom
            weights = weights / weights.sum()
            logger.debug("EL converged: iter=%d residual=%.3e", iteration, residual)
            return TiltSolution(
                t=t,
                weights=weights,
                method=Method.EL,
                iterations=iteration,
                residual_norm=residual,
                converged=True,
                log_weights=np.log(weights),
            )
        if iteration == max_iter:
            break

        scaled = g / denom[:, None]
        info = scaled.T @ scaled / n
        if _is_singular(info):
            if iteration == 0:
                raise SingularMoments("sample moment matrix (1/n) sum g g^T is singular")
            raise HullFailure("EL Hessian degenerated; zero is on the hull boundary")
        direction = np.linalg.solve(info, grad)
        slope = float(grad @ direction)

        alpha = 1.0
        for _ in range(MAX_BACKTRACKS):
            candidate = t + alpha * direction
            new_denom = 1.0 + g @ candidate
            if np.all(new_denom > floor):
                new_objective = float(np.mean(np.log(new_denom)))
                gain = new_objective - objective
                if gain >= ARMIJO_C * alpha * slope or (
                    alpha == 1.0 and gain >= -_FLAT_SLACK * max(1.0, abs(objective))
                ):
                    break
            alpha *= ARMIJO_SHRINK
        else:
            raise HullFailure(f"EL step halving stalled at residual {residual:.3e}")

        t = candidate
        objective = new_objective
        if np.max(np.abs(t)) > hull_limit:
            raise HullFailure(f"EL multiplier diverged (|t|_inf > {hull_limit:g})")

    raise HullFailure(
        f"EL solver reached max_iter={max_iter} with residual {residual:.3e}"
    )


# ── Dispatch ─────────────────────────────────────────────────────


def tilt(
    method: Method | str,
    mm: MomentMatrix,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    hull_limit: float = HULL_LIMIT,
) -> TiltSolution:
    """EL weights for ``EL``; ET weights for ``ET`` and ``ETEL``."""
    if Method.parse(method) is Method.EL:
        return solve_el_multiplier(mm, tol, max_iter, hull_limit=hull_limit)
    return solve_et_multiplier(mm, tol, max_iter, hull_limit=hull_limit)
