from __future__ import annotations

import math

import numpy as np
import pytest

from etel_divergence.divergence import (
    PhiFunction,
    bhattacharyya_h,
    d_phi,
    hphi_divergence,
    identity_h,
    kullback_phi,
    normalize_phi,
    power_divergence_phi,
    renyi_divergence,
    renyi_h,
    renyi_phi,
    sharma_mittal_h,
)
from etel_divergence.errors import DomainError, InvalidOrder, LengthMismatch, NonpositiveWeight


def _random_pair(seed: int, n: int = 6) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    u = rng.random(n) + 0.05
    p = rng.random(n) + 0.05
    return u / u.sum(), p / p.sum()


# ── Generators ───────────────────────────────────────────────────


def test_power_divergence_vanishes_at_one() -> None:
    f = power_divergence_phi(0.0)
    assert float(f.phi(1.0)) == pytest.approx(0.0)
    assert float(f.dphi(1.0)) == pytest.approx(0.0)


def test_power_divergence_two_thirds_at_two() -> None:
    f = power_divergence_phi(2.0 / 3.0)
    expected = (2.0 ** (5.0 / 3.0) - 2.0 - 2.0 / 3.0) / ((2.0 / 3.0) * (5.0 / 3.0))
    assert float(f.phi(2.0)) == pytest.approx(expected)
    assert float(f.phi(2.0)) == pytest.approx(0.457322, abs=1e-6)


@pytest.mark.parametrize("lam", [-2.0, -1.0, -0.5, 0.0, 2.0 / 3.0, 1.0, 3.0])
def test_second_derivative_at_one_is_one(lam: float) -> None:
    f = power_divergence_phi(lam)
    h = 1e-4
    second = (float(f.phi(1.0 + h)) - 2.0 * float(f.phi(1.0)) + float(f.phi(1.0 - h))) / h**2
    assert f.dd1 == 1.0
    assert second == pytest.approx(1.0, rel=1e-4)


@pytest.mark.parametrize("lam", [-1.0, -0.5, 0.0, 2.0 / 3.0])
def test_first_derivative_matches_finite_difference(lam: float) -> None:
    f = power_divergence_phi(lam)
    for x in (0.3, 1.7, 4.0):
        h = 1e-6
        numeric = (float(f.phi(x + h)) - float(f.phi(x - h))) / (2.0 * h)
        assert float(f.dphi(x)) == pytest.approx(numeric, rel=1e-6)


def test_branches_are_continuous_in_lambda() -> None:
    x = np.array([0.4, 1.3, 2.5])
    assert power_divergence_phi(1e-6).phi(x) == pytest.approx(
        power_divergence_phi(0.0).phi(x), abs=1e-5
    )
    assert power_divergence_phi(-1.0 + 1e-6).phi(x) == pytest.approx(
        power_divergence_phi(-1.0).phi(x), abs=1e-5
    )


def test_kullback_values() -> None:
    f = kullback_phi()
    assert float(f.phi(1.0)) == pytest.approx(0.0)
    assert float(f.phi(math.e)) == pytest.approx(1.0)
    assert float(f.psi(2.0)) == pytest.approx(-1.0)


def test_kullback_matches_lambda_zero_branch() -> None:
    x = np.linspace(0.1, 5.0, 9)
    assert kullback_phi().phi(x) == pytest.approx(power_divergence_phi(0.0).phi(x), abs=1e-15)


def test_normalize_phi_fixed_point() -> None:
    f = power_divergence_phi(-0.5)
    assert normalize_phi(f) is f


def test_normalize_phi_removes_linear_term() -> None:
    raw = PhiFunction(
        phi=lambda x: np.asarray(x) * np.log(np.asarray(x)),
        dphi=lambda x: np.log(np.asarray(x)) + 1.0,
        dd1=1.0,
        label="xlogx",
    )
    normed = normalize_phi(raw)
    x = np.array([0.5, 2.0, 3.0])
    assert normed.phi(x) == pytest.approx(x * np.log(x) - (x - 1.0))
    for seed in range(5):
        u, p = _random_pair(seed)
        assert d_phi(u, p, normed) == pytest.approx(d_phi(u, p, raw), abs=1e-12)


def test_phi_requires_positive_curvature() -> None:
    with pytest.raises(ValueError, match="phi''"):
        PhiFunction(phi=lambda x: x, dphi=lambda x: 1.0, dd1=0.0, label="flat")


# ── Divergences ──────────────────────────────────────────────────


def test_d_phi_of_identical_vectors_is_zero() -> None:
    u, _ = _random_pair(1)
    assert d_phi(u, u, power_divergence_phi(-1.0)) == pytest.approx(0.0, abs=1e-15)


def test_d_phi_kullback_hand_value() -> None:
    value = d_phi([0.5, 0.5], [2.0 / 3.0, 1.0 / 3.0], kullback_phi())
    assert value == pytest.approx(0.5 * math.log(9.0 / 8.0))
    assert value == pytest.approx(0.058891, abs=1e-6)


def test_d_phi_minus_one_hand_value() -> None:
    u = np.array([0.5, 0.5])
    p = np.array([0.25, 0.75])
    expected = float(np.sum(p * (-np.log(u / p) + u / p - 1.0)))
    assert d_phi(u, p, power_divergence_phi(-1.0)) == pytest.approx(expected)
    assert expected == pytest.approx(0.130812, abs=1e-6)


def test_scaled_phi_scales_the_divergence() -> None:
    u, p = _random_pair(8)
    f = power_divergence_phi(-0.5)
    scaled = f.scaled(2.5)
    assert d_phi(u, p, scaled) == pytest.approx(2.5 * d_phi(u, p, f), rel=1e-12)
    assert scaled.slope_inf == pytest.approx(2.5 * f.slope_inf)
    with pytest.raises(ValueError, match="scale"):
        f.scaled(0.0)


def test_d_phi_boundary_conventions() -> None:
    f = kullback_phi()
    assert d_phi([0.0, 1.0], [0.0, 1.0], f) == pytest.approx(0.0)
    assert d_phi([0.5, 0.5], [0.0, 1.0], f) == math.inf
    # phi_{-1}(x) / x -> 1, so mass u on p = 0 contributes u
    bounded = d_phi([0.5, 0.5], [0.0, 1.0], power_divergence_phi(-1.0))
    assert bounded == pytest.approx(0.5 + float(power_divergence_phi(-1.0).phi(0.5)))


def test_d_phi_input_validation() -> None:
    f = kullback_phi()
    with pytest.raises(LengthMismatch):
        d_phi([0.5, 0.5], [1.0], f)
    with pytest.raises(NonpositiveWeight):
        d_phi([0.5, 0.5], [1.5, -0.5], f)


def test_d_phi_is_non_negative_on_random_pairs() -> None:
    for seed in range(10):
        u, p = _random_pair(seed)
        for lam in (-1.0, -0.5, 0.0, 2.0 / 3.0):
            assert d_phi(u, p, power_divergence_phi(lam)) >= -1e-15


# ── h functions ──────────────────────────────────────────────────


def test_hphi_identical_vectors_give_zero() -> None:
    u, _ = _random_pair(4)
    assert hphi_divergence(u, u, kullback_phi(), renyi_h(2.0)) == pytest.approx(0.0)


def test_renyi_h_values() -> None:
    h = renyi_h(2.0)
    assert h.h(0.0) == 0.0
    assert h.h(0.1) == pytest.approx(0.5 * math.log(1.2))
    assert h.h(0.1) == pytest.approx(0.09116, abs=1e-5)


def test_renyi_h_domain() -> None:
    with pytest.raises(DomainError):
        renyi_h(0.5).h(5.0)


def test_sharma_mittal_simple_case() -> None:
    h = sharma_mittal_h(2.0, 2.0)
    assert h.h(0.3) == pytest.approx(0.6)
    assert h.dh0 == 2.0


def test_sharma_mittal_tends_to_renyi() -> None:
    a = 2.0
    limit = sharma_mittal_h(a, 1.0 + 1e-7)
    renyi = renyi_h(a)
    assert limit.h(0.1) / limit.dh0 == pytest.approx(renyi.h(0.1), rel=1e-6)


def test_order_validation() -> None:
    with pytest.raises(InvalidOrder):
        renyi_h(1.0)
    with pytest.raises(InvalidOrder):
        sharma_mittal_h(2.0, 1.0)


def test_bhattacharyya_is_quarter_renyi_half() -> None:
    assert bhattacharyya_h().h(0.2) == pytest.approx(renyi_h(0.5).h(0.2) / 4.0)


def test_identity_h() -> None:
    assert identity_h().h(0.37) == 0.37


@pytest.mark.parametrize("a", [0.5, 2.0, 3.0])
def test_renyi_divergence_equals_h_phi_composition(a: float) -> None:
    for seed in range(5):
        p, q = _random_pair(10 + seed)
        direct = renyi_divergence(p, q, a)
        composed = hphi_divergence(p, q, renyi_phi(a), renyi_h(a))
        assert direct == pytest.approx(composed, abs=1e-12)
