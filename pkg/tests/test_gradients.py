from __future__ import annotations

import numpy as np
import pytest

from etel_divergence.config import SolverOptions
from etel_divergence.divergence import PhiFunction, d_phi, kullback_phi, power_divergence_phi
from etel_divergence.estimators import estimate, profile_criterion
from etel_divergence.gradients import (
    criterion_gradient,
    dphi_pp_gradient,
    dphi_u_gradient,
    weight_gradient,
)
from etel_divergence.models import Method
from etel_divergence.moments import (
    MomentModel,
    Sample,
    evaluate_moments,
    mean_variance_normal_model,
)
from etel_divergence.montecarlo import draw_normal_sample
from etel_divergence.tilting import TiltSolution, solve_et_multiplier

MODEL = mean_variance_normal_model(1.0)
TIGHT = SolverOptions(tol=1e-12, max_iter=200)
STEP = 1e-5
LAMBDAS = (-1.0, -0.5, 0.0, 2.0 / 3.0)


def _tilt_at(model: MomentModel, sample: Sample, theta: float) -> TiltSolution:
    return solve_et_multiplier(evaluate_moments(model, sample, theta), TIGHT.tol, TIGHT.max_iter)


def _configuration(seed: int) -> tuple[Sample, float, float]:
    rng = np.random.default_rng(seed)
    theta_true = float(rng.uniform(-0.4, 0.4))
    sample = Sample.from_values(draw_normal_sample(theta_true, 1.0, 60, seed))
    theta = theta_true + float(rng.uniform(-0.15, 0.15))
    theta0 = theta_true + float(rng.uniform(-0.15, 0.15))
    return sample, theta, theta0


def _central(fn, x: float) -> float:  # type: ignore[no-untyped-def]
    return (fn(x + STEP) - fn(x - STEP)) / (2.0 * STEP)


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


@pytest.mark.parametrize("seed", range(20))
def test_weight_gradient_matches_finite_differences(seed: int) -> None:
    sample, theta, _ = _configuration(seed)
    sol = _tilt_at(MODEL, sample, theta)
    mm = evaluate_moments(MODEL, sample, theta)
    analytic = weight_gradient(mm, sol, MODEL, sample, theta)[:, 0]
    up = _tilt_at(MODEL, sample, theta + STEP).weights
    down = _tilt_at(MODEL, sample, theta - STEP).weights
    numeric = (up - down) / (2.0 * STEP)
    assert _rel_err(analytic, numeric) < 1e-4


def test_weight_gradient_rows_sum_to_zero() -> None:
    sample, theta, _ = _configuration(99)
    sol = _tilt_at(MODEL, sample, theta)
    rows = weight_gradient(evaluate_moments(MODEL, sample, theta), sol, MODEL, sample, theta)
    assert rows.sum(axis=0) == pytest.approx(np.zeros(1), abs=1e-10)


def test_weight_gradient_exactly_identified_at_zero_multiplier() -> None:
    model = MomentModel(p=1, r=1, g=lambda data, theta: data[:, :1] - theta[0])
    sample = Sample.from_values([0.4, -1.3, 2.2, 0.1, -0.6])
    theta = float(sample.data.mean())
    mm = evaluate_moments(model, sample, theta)
    sol = _tilt_at(model, sample, theta)
    g = mm.values[:, 0]
    expected = g / np.mean(g * g) / sample.n
    rows = weight_gradient(mm, sol, model, sample, theta)[:, 0]
    assert rows == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("seed", range(20))
def test_dphi_u_gradient_matches_finite_differences(seed: int) -> None:
    sample, theta, _ = _configuration(200 + seed)
    f = power_divergence_phi(LAMBDAS[seed % len(LAMBDAS)])
    u = np.full(sample.n, 1.0 / sample.n)
    sol = _tilt_at(MODEL, sample, theta)
    mm = evaluate_moments(MODEL, sample, theta)
    analytic = dphi_u_gradient(mm, sol, MODEL, sample, theta, f)

    def divergence(x: float) -> float:
        return d_phi(u, _tilt_at(MODEL, sample, x).weights, f)

    assert _rel_err(analytic, np.array([_central(divergence, theta)])) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_dphi_pp_gradient_matches_finite_differences(seed: int) -> None:
    sample, theta, theta0 = _configuration(400 + seed)
    f = power_divergence_phi(LAMBDAS[seed % len(LAMBDAS)])
    reference = _tilt_at(MODEL, sample, theta0)
    sol = _tilt_at(MODEL, sample, theta)
    mm = evaluate_moments(MODEL, sample, theta)
    analytic = dphi_pp_gradient(mm, sol, MODEL, sample, theta, theta0, f, reference=reference)

    def divergence(x: float) -> float:
        return d_phi(_tilt_at(MODEL, sample, x).weights, reference.weights, f)

    assert _rel_err(analytic, np.array([_central(divergence, theta)])) < 1e-4


def test_dphi_pp_gradient_vanishes_at_the_null_for_normalised_phi() -> None:
    sample, theta, _ = _configuration(7)
    sol = _tilt_at(MODEL, sample, theta)
    mm = evaluate_moments(MODEL, sample, theta)
    grad = dphi_pp_gradient(mm, sol, MODEL, sample, theta, theta, kullback_phi(), opts=TIGHT)
    assert grad == pytest.approx(np.zeros(1), abs=1e-12)


def test_kullback_and_lambda_zero_branches_agree() -> None:
    sample, theta, theta0 = _configuration(8)
    sol = _tilt_at(MODEL, sample, theta)
    mm = evaluate_moments(MODEL, sample, theta)
    zero: PhiFunction = power_divergence_phi(0.0)
    a = dphi_pp_gradient(mm, sol, MODEL, sample, theta, theta0, kullback_phi(), opts=TIGHT)
    b = dphi_pp_gradient(mm, sol, MODEL, sample, theta, theta0, zero, opts=TIGHT)
    assert a == pytest.approx(b, abs=1e-10)


def test_kullback_u_gradient_is_etel_criterion_gradient() -> None:
    sample, theta, _ = _configuration(9)
    sol = _tilt_at(MODEL, sample, theta)
    mm = evaluate_moments(MODEL, sample, theta)
    analytic = dphi_u_gradient(mm, sol, MODEL, sample, theta, kullback_phi())

    def criterion(x: float) -> float:
        return profile_criterion(Method.ETEL, MODEL, sample, x, TIGHT)

    assert _rel_err(analytic, np.array([_central(criterion, theta)])) < 1e-4
    assert criterion_gradient(Method.ETEL, MODEL, sample, theta, TIGHT) == pytest.approx(analytic)


def test_et_criterion_gradient_matches_finite_differences() -> None:
    sample, theta, _ = _configuration(10)
    analytic = criterion_gradient(Method.ET, MODEL, sample, theta, TIGHT)

    def criterion(x: float) -> float:
        return profile_criterion(Method.ET, MODEL, sample, x, TIGHT)

    assert _rel_err(analytic, np.array([_central(criterion, theta)])) < 1e-4


def test_gradient_vanishes_at_the_etel_estimate() -> None:
    sample, _, _ = _configuration(11)
    est = estimate(Method.ETEL, MODEL, sample, opts=TIGHT)
    grad = criterion_gradient(Method.ETEL, MODEL, sample, est.theta_hat, TIGHT)
    assert float(np.max(np.abs(grad))) < 1e-5


def test_criterion_gradient_rejects_el() -> None:
    sample, theta, _ = _configuration(12)
    with pytest.raises(ValueError, match="ET weights"):
        criterion_gradient(Method.EL, MODEL, sample, theta, TIGHT)
