"""phi-divergence generators, (h, phi) wrappers and divergence evaluation."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

import numpy as np

from etel_divergence.errors import (
    DomainError,
    InvalidOrder,
    LengthMismatch,
    NonpositiveWeight,
)

ArrayFn = Callable[[Any], Any]

LAMBDA_BRANCH_TOL = 1e-8


@dataclass(frozen=True)
class PhiFunction:
    """Convex generator with ``phi(1) = 0`` and its analytic first derivative.

    ``slope_inf`` is ``lim_{x -> inf} phi(x) / x`` (``inf`` when it diverges)
    and drives the ``0 * phi(u / 0)`` boundary convention.
    """

    phi: ArrayFn
    dphi: ArrayFn
    dd1: float
    label: str
    slope_inf: float = np.inf

    def __post_init__(self) -> None:
        if not self.dd1 > 0:
            raise ValueError(f"phi''(1) must be > 0 for {self.label}")

    def psi(self, x: Any) -> Any:
        """``psi(x) = phi(x) - x phi'(x)``."""
        return self.phi(x) - x * self.dphi(x)

    def scaled(self, c: float) -> PhiFunction:
        if not c > 0:
            raise ValueError("scale must be > 0")
        base_phi, base_dphi = self.phi, self.dphi
        return PhiFunction(
            phi=lambda x: c * base_phi(x),
            dphi=lambda x: c * base_dphi(x),
            dd1=c * self.dd1,
            label=f"{c:g}*{self.label}",
            slope_inf=c * self.slope_inf,
        )


@dataclass(frozen=True)
class HFunction:
    """Increasing ``h`` with ``h(0) = 0`` applied on top of a phi-divergence."""

    h: Callable[[float], float]
    dh0: float
    label: str

    def __post_init__(self) -> None:
        if not self.dh0 > 0:
            raise ValueError(f"h'(0) must be > 0 for {self.label}")


# ── Generators ───────────────────────────────────────────────────


def _asarray(x: Any) -> np.ndarray:
    return np.asarray(x, dtype=float)


def power_divergence_phi(lam: float) -> PhiFunction:
    """Cressie-Read generator ``phi_lambda``; ``phi_lambda''(x) = x^(lambda - 1)``."""
    lam = float(lam)
    if abs(lam) < LAMBDA_BRANCH_TOL:
        return PhiFunction(
            phi=lambda x: _xlogx(_asarray(x)) - _asarray(x) + 1.0,
            dphi=lambda x: np.log(_asarray(x)),
            dd1=1.0,
            label="power-divergence(lambda=0)",
            slope_inf=np.inf,
        )
    if abs(lam + 1.0) < LAMBDA_BRANCH_TOL:
        return PhiFunction(
            phi=lambda x: -np.log(_asarray(x)) + _asarray(x) - 1.0,
            dphi=lambda x: 1.0 - 1.0 / _asarray(x),
            dd1=1.0,
            label="power-divergence(lambda=-1)",
            slope_inf=1.0,
        )
    scale = lam * (lam + 1.0)

    def phi(x: Any) -> Any:
        x = _asarray(x)
        return (np.power(x, lam + 1.0) - x - lam * (x - 1.0)) / scale

    def dphi(x: Any) -> Any:
        return (np.power(_asarray(x), lam) - 1.0) / lam

    # x^(lam+1) dominates for lam > 0; otherwise phi(x)/x -> -1/lam
    slope = np.inf if lam > 0 else -1.0 / lam
    return PhiFunction(
        phi=phi, dphi=dphi, dd1=1.0, label=f"power-divergence(lambda={lam:g})", slope_inf=slope
    )


def _xlogx(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def kullback_phi() -> PhiFunction:
    """``phi(x) = x log x - x + 1``."""
    base = power_divergence_phi(0.0)
    return PhiFunction(
        phi=base.phi, dphi=base.dphi, dd1=1.0, label="kullback", slope_inf=np.inf
    )


def renyi_phi(a: float) -> PhiFunction:
    """Generator paired with :func:`renyi_h`: ``(x^a - a(x - 1) - 1) / (a(a - 1))``."""
    return power_divergence_phi(float(a) - 1.0)


def normalize_phi(f: PhiFunction) -> PhiFunction:
    """``phi(x) - (x - 1) phi'(1)``; same divergence on probability vectors."""
    d1 = float(f.dphi(1.0))
    if d1 == 0.0:
        return f
    base_phi, base_dphi = f.phi, f.dphi
    return PhiFunction(
        phi=lambda x: base_phi(x) - (_asarray(x) - 1.0) * d1,
        dphi=lambda x: base_dphi(x) - d1,
        dd1=f.dd1,
        label=f"normalized({f.label})",
        slope_inf=f.slope_inf - d1,
    )


# ── Divergences ──────────────────────────────────────────────────


def _as_prob_pair(u: Any, p: Any) -> tuple[np.ndarray, np.ndarray]:
    u_arr = _asarray(u).reshape(-1)
    p_arr = _asarray(p).reshape(-1)
    if u_arr.shape != p_arr.shape:
        raise LengthMismatch(f"vectors have lengths {u_arr.size} and {p_arr.size}")
    if np.any(p_arr < 0) or np.any(u_arr < 0):
        raise NonpositiveWeight("probability vectors must be non-negative")
    if not (np.all(np.isfinite(u_arr)) and np.all(np.isfinite(p_arr))):
        raise NonpositiveWeight("probability vectors must be finite")
    return u_arr, p_arr


def d_phi(u: Any, p: Any, f: PhiFunction) -> float:
    """``D_phi(u, p) = sum_i p_i phi(u_i / p_i)``.

    Zero entries of ``p`` follow ``0 * phi(0/0) = 0`` and
    ``0 * phi(u/0) = u * lim phi(x)/x`` (``inf`` when that limit diverges).
    """
    u_arr, p_arr = _as_prob_pair(u, p)
    pos = p_arr > 0
    total = 0.0
    if np.any(pos):
        total = float(np.sum(p_arr[pos] * f.phi(u_arr[pos] / p_arr[pos])))
    boundary = u_arr[~pos]
    mass = float(boundary.sum())
    if mass > 0:
        if not np.isfinite(f.slope_inf):
            return float("inf")
        total += mass * f.slope_inf
    return total


def hphi_divergence(u: Any, p: Any, f: PhiFunction, h: HFunction) -> float:
    """``h(D_phi(u, p))``."""
    return h.h(d_phi(u, p, f))


def renyi_divergence(p: Any, q: Any, a: float) -> float:
    """Renyi divergence of order ``a`` in the ``1 / (a(a - 1))`` scaling.

    Equals ``hphi_divergence(p, q, renyi_phi(a), renyi_h(a))``.
    """
    a = float(a)
    p_arr, q_arr = _as_prob_pair(p, q)
    if abs(a - 1.0) < LAMBDA_BRANCH_TOL:
        return d_phi(p_arr, q_arr, kullback_phi())
    if abs(a) < LAMBDA_BRANCH_TOL:
        return d_phi(q_arr, p_arr, kullback_phi())
    mask = (p_arr > 0) | (q_arr > 0)
    with np.errstate(divide="ignore"):
        terms = np.power(p_arr[mask], a) * np.power(q_arr[mask], 1.0 - a)
    total = float(np.sum(terms))
    if total <= 0 or not np.isfinite(total):
        raise DomainError(f"Renyi sum is {total}; log argument must be > 0")
    return float(np.log(total) / (a * (a - 1.0)))


# ── h functions ──────────────────────────────────────────────────


def _check_order(a: float) -> float:
    a = float(a)
    if not np.isfinite(a) or abs(a) < LAMBDA_BRANCH_TOL or abs(a - 1.0) < LAMBDA_BRANCH_TOL:
        raise InvalidOrder(f"order a must be finite and not in {{0, 1}}, got {a}")
    return a


def identity_h() -> HFunction:
    return HFunction(h=lambda x: float(x), dh0=1.0, label="identity")


def renyi_h(a: float) -> HFunction:
    """``h(x) = log(a(a - 1) x + 1) / (a(a - 1))``, ``h'(0) = 1``."""
    a = _check_order(a)
    c = a * (a - 1.0)

    def h(x: float) -> float:
        arg = c * float(x)
        if not arg > -1.0:
            raise DomainError(f"Renyi h undefined: 1 + a(a-1)x = {1.0 + arg:g} <= 0")
        return float(np.log1p(arg) / c)

    return HFunction(h=h, dh0=1.0, label=f"renyi(a={a:g})")


def bhattacharyya_h() -> HFunction:
    """Renyi ``h`` at ``a = 1/2`` divided by 4."""
    base = renyi_h(0.5)
    return HFunction(h=lambda x: base.h(x) / 4.0, dh0=0.25, label="bhattacharyya")


def sharma_mittal_h(a: float, b: float) -> HFunction:
    """``h(x) = ((1 + a(a - 1) x)^((b - 1)/(a - 1)) - 1) / (b - 1)``.

    ``h'(0) = a``. Dividing by ``h'(0)`` recovers Renyi as ``b -> 1``.
    """
    a = _check_order(a)
    b = float(b)
    if not np.isfinite(b) or abs(b - 1.0) < LAMBDA_BRANCH_TOL:
        raise InvalidOrder(f"Sharma-Mittal order b must be finite and != 1, got {b}")
    c = a * (a - 1.0)
    power = (b - 1.0) / (a - 1.0)

    def h(x: float) -> float:
        arg = c * float(x)
        if not arg > -1.0:
            raise DomainError(f"Sharma-Mittal h undefined: 1 + a(a-1)x = {1.0 + arg:g} <= 0")
        return float(np.expm1(power * np.log1p(arg)) / (b - 1.0))

    return HFunction(h=h, dh0=a, label=f"sharma-mittal(a={a:g}, b={b:g})")
