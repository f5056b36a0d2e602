from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np
import pytest

from etel_divergence.asymptotics import sandwich_blocks
from etel_divergence.config import SolverOptions
from etel_divergence.divergence import kullback_phi, power_divergence_phi
from etel_divergence.estimators import estimate, estimate_etel
from etel_divergence.misspec import (
    JointPseudoValue,
    estimating_rows,
    misspec_fit,
    misspec_power,
    misspec_sandwich,
)
from etel_divergence.models import Method
from etel_divergence.moments import Sample, mean_variance_normal_model
from etel_divergence.montecarlo import draw_normal_sample

MODEL = mean_variance_normal_model(1.0)
TIGHT = SolverOptions(tol=1e-12, outer_tol=1e-10)


def _fit(delta: float, n: int, seed: int) -> tuple[Sample, JointPseudoValue]:
    sample = Sample.from_values(draw_normal_sample(0.0, delta, n, seed))
    est = estimate_etel(MODEL, sample, opts=TIGHT)
    return sample, misspec_fit(MODEL, sample, est)


def test_stacking_round_trip() -> None:
    beta = JointPseudoValue(
        theta=np.array([0.1]), t=np.array([0.2, 0.3]), kappa=np.array([0.4, 0.5]), tau_scalar=1.1
    )
    assert beta.size == 6
    again = JointPseudoValue.from_stacked(beta.stacked(), 1, 2)
    assert again.stacked().tolist() == beta.stacked().tolist()
    with pytest.raises(ValueError, match="length 6"):
        JointPseudoValue.from_stacked([0.0] * 5, 1, 2)


def test_correct_specification_gives_trivial_multipliers() -> None:
    _, beta = _fit(1.0, 5_000, 1)
    assert beta.theta[0] == pytest.approx(0.0, abs=0.1)
    assert beta.t == pytest.approx([0.0, 0.0], abs=0.1)
    assert beta.kappa == pytest.approx([0.0, 0.0], abs=0.1)
    assert beta.tau_scalar == pytest.approx(1.0, abs=0.05)


def test_joint_residual_vanishes_at_the_fit() -> None:
    sample, beta = _fit(0.8, 2_000, 2)
    residual = estimating_rows(MODEL, sample, beta).mean(axis=0)
    assert float(np.max(np.abs(residual))) <= 1e-6


def test_misspec_fit_warns_when_joint_residual_is_large(
    caplog: pytest.LogCaptureFixture, monkeypatch: pytest.MonkeyPatch
) -> None:
    monkeypatch.setattr(logging.getLogger("etel_divergence"), "propagate", True)
    sample = Sample.from_values(draw_normal_sample(0.0, 0.8, 500, 12))
    est = estimate_etel(MODEL, sample, opts=TIGHT)
    # theta moved off the optimum while t stays at the old tilt
    shifted = dataclasses.replace(est, theta_hat=est.theta_hat + 0.2)
    with caplog.at_level(logging.WARNING, logger="etel_divergence.misspec"):
        misspec_fit(MODEL, sample, shifted, TIGHT)
    assert any("joint estimating residual" in r.getMessage() for r in caplog.records)

    caplog.clear()
    with caplog.at_level(logging.WARNING, logger="etel_divergence.misspec"):
        misspec_fit(MODEL, sample, est, SolverOptions(tol=1e-6, outer_tol=1e-6))
    assert not caplog.records


def test_tau_matches_population_value_under_misspecification() -> None:
    _, beta = _fit(0.7, 10_000, 3)
    t2 = 0.3 / 1.4
    # E exp(t2 (X^2 - 1)) for X ~ N(0, 0.7)
    expected = math.exp(-t2) / math.sqrt(1.0 - 2.0 * t2 * 0.7)
    assert beta.tau_scalar == pytest.approx(expected, abs=0.05)


def test_misspec_fit_requires_etel() -> None:
    sample = Sample.from_values(draw_normal_sample(0.0, 1.0, 100, 4))
    est = estimate(Method.ET, MODEL, sample)
    with pytest.raises(ValueError, match="ETEL"):
        misspec_fit(MODEL, sample, est)


def test_phi_matrix_is_symmetric_psd() -> None:
    sample, beta = _fit(0.8, 1_000, 5)
    law = misspec_sandwich(MODEL, sample, beta)
    assert law.Phi == pytest.approx(law.Phi.T)
    assert float(np.min(np.linalg.eigvalsh(law.Phi))) >= -1e-8
    assert law.Gamma.shape == (6, 6)
    assert law.Sigma_theta.shape == (1, 1)


def test_gamma_is_reproducible() -> None:
    sample, beta = _fit(0.8, 500, 6)
    first = misspec_sandwich(MODEL, sample, beta).Gamma
    second = misspec_sandwich(MODEL, sample, beta).Gamma
    assert first == pytest.approx(second, abs=1e-6)


def test_sigma_theta_matches_v_under_correct_specification() -> None:
    sample, beta = _fit(1.0, 10_000, 7)
    law = misspec_sandwich(MODEL, sample, beta)
    v = sandwich_blocks(MODEL, sample, beta.theta).V
    assert law.Sigma_theta[0, 0] == pytest.approx(v[0, 0], rel=0.15)


# ── Power ────────────────────────────────────────────────────────


def test_g2_mu_vanishes_when_pseudo_true_equals_null() -> None:
    sample, beta = _fit(0.8, 1_000, 8)
    law = misspec_power("g2", MODEL, sample, beta.theta, beta, None, 100, 0.05)
    assert law.mu_star == pytest.approx(0.0, abs=1e-12)
    assert law.beta_star is not None
    assert 0.0 <= law.beta_star <= 1.0


def test_g2_equals_kullback_t_family() -> None:
    sample, beta = _fit(0.8, 1_000, 9)
    law = misspec_sandwich(MODEL, sample, beta)
    g2 = misspec_power("g2", MODEL, sample, 0.3, beta, None, 100, 0.05, law=law)
    t0 = misspec_power("t", MODEL, sample, 0.3, beta, kullback_phi(), 100, 0.05, law=law)
    assert g2.mu_star == pytest.approx(t0.mu_star, abs=1e-8)
    assert g2.r_or_q == pytest.approx(t0.r_or_q, rel=1e-6, abs=1e-8)
    assert g2.beta_star == pytest.approx(t0.beta_star, abs=1e-8)


@pytest.mark.parametrize("family", ["t", "s", "g2"])
def test_power_lies_in_unit_interval(family: str) -> None:
    sample, beta = _fit(0.8, 1_000, 10)
    law = misspec_power(
        family, MODEL, sample, 0.25, beta, power_divergence_phi(-0.5), 50, 0.05
    )
    assert law.beta_star is not None
    assert 0.0 <= law.beta_star <= 1.0
    assert law.r_or_q is not None and law.r_or_q.shape == (1,)
    assert set(law.to_dict()) == {
        "Gamma",
        "Phi",
        "Sigma_theta",
        "r_or_q",
        "mu_star",
        "nu",
        "beta_star",
    }


def test_misspec_power_rejects_h_families_and_bad_alpha() -> None:
    sample, beta = _fit(0.8, 300, 11)
    with pytest.raises(ValueError, match="t, s and g2"):
        misspec_power("t_h", MODEL, sample, 0.0, beta, kullback_phi(), 50, 0.05)
    with pytest.raises(ValueError, match="alpha"):
        misspec_power("t", MODEL, sample, 0.0, beta, kullback_phi(), 50, 1.0)
