from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import optimize

from etel_divergence.errors import HullFailure, SingularMoments
from etel_divergence.models import Method
from etel_divergence.moments import MomentMatrix
from etel_divergence.tilting import (
    el_weights,
    et_weights,
    etel_loglik,
    solve_el_multiplier,
    solve_et_multiplier,
    tilt,
)


def _rows(*values: float) -> MomentMatrix:
    return MomentMatrix.from_rows([[v] for v in values])


# ── ET ───────────────────────────────────────────────────────────


def test_et_symmetric_rows_give_zero_multiplier() -> None:
    sol = solve_et_multiplier(_rows(-1.0, 1.0))
    assert sol.t == pytest.approx([0.0])
    assert sol.weights == pytest.approx([0.5, 0.5])
    assert sol.converged


def test_et_centred_rows_give_uniform_weights() -> None:
    rng = np.random.default_rng(21)
    rows = rng.normal(size=(40, 2)) * [1.0, 3.0] + [0.4, -2.0]
    sol = solve_et_multiplier(MomentMatrix.from_rows(rows - rows.mean(axis=0)))
    assert sol.converged
    assert sol.t == pytest.approx([0.0, 0.0], abs=1e-10)
    assert sol.weights == pytest.approx(np.full(40, 1.0 / 40.0), abs=1e-12)


def test_et_two_point_example() -> None:
    sol = solve_et_multiplier(_rows(-1.0, 2.0))
    assert sol.t[0] == pytest.approx(-math.log(2.0) / 3.0, abs=1e-8)
    assert sol.weights == pytest.approx([2.0 / 3.0, 1.0 / 3.0], abs=1e-10)
    assert sol.method is Method.ET


def test_et_zero_outside_hull_fails() -> None:
    with pytest.raises(HullFailure):
        solve_et_multiplier(_rows(1.0, 2.0))


def test_et_singular_start_is_reported() -> None:
    mm = MomentMatrix.from_rows([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]])
    with pytest.raises(SingularMoments, match="singular"):
        solve_et_multiplier(mm)


def test_et_dual_path_is_non_increasing() -> None:
    rng = np.random.default_rng(3)
    x = rng.standard_normal(50)
    mm = MomentMatrix.from_rows(np.column_stack([x - 0.2, x * x - 1.0]))
    sol = solve_et_multiplier(mm)
    path = np.asarray(sol.dual_path)
    assert np.all(np.diff(path) <= 1e-12)


def test_et_weights() -> None:
    mm = _rows(0.3, -1.0, 2.0, 0.1)
    assert et_weights(mm, [0.0]) == pytest.approx([0.25] * 4)
    assert et_weights(_rows(-1.0, 2.0), [-math.log(2.0) / 3.0]) == pytest.approx([2 / 3, 1 / 3])
    assert et_weights(_rows(5.0), [3.0]).tolist() == [1.0]


@pytest.mark.parametrize("seed", range(5))
def test_et_matches_bisection_oracle(seed: int) -> None:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    values = rng.integers(-4, 5, size=n).astype(float)
    values[0], values[-1] = -abs(values[0]) - 1.0, abs(values[-1]) + 1.0
    mm = _rows(*values)

    def tilted_mean(t: float) -> float:
        return float(np.sum(values * np.exp(t * values)))

    oracle = optimize.brentq(tilted_mean, -50.0, 50.0, xtol=1e-14)
    assert solve_et_multiplier(mm).t[0] == pytest.approx(oracle, abs=1e-8)


# ── EL ───────────────────────────────────────────────────────────


def test_el_symmetric_rows_give_zero_multiplier() -> None:
    sol = solve_el_multiplier(_rows(-1.0, 1.0))
    assert sol.t == pytest.approx([0.0])
    assert sol.weights == pytest.approx([0.5, 0.5])


def test_el_two_point_example() -> None:
    sol = solve_el_multiplier(_rows(-1.0, 2.0))
    assert sol.t[0] == pytest.approx(0.25, abs=1e-8)
    assert sol.weights == pytest.approx([2.0 / 3.0, 1.0 / 3.0], abs=1e-10)


def test_el_zero_outside_hull_fails() -> None:
    with pytest.raises(HullFailure):
        solve_el_multiplier(_rows(-3.0, -1.0))


@pytest.mark.parametrize("seed", range(5))
def test_el_matches_bisection_oracle(seed: int) -> None:
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(2, 6))
    values = rng.integers(-4, 5, size=n).astype(float)
    values[0], values[-1] = -abs(values[0]) - 1.0, abs(values[-1]) + 1.0
    mm = _rows(*values)
    # 1 + t g_i > 0 for every row
    lo = -1.0 / values.max() + 1e-12
    hi = -1.0 / values.min() - 1e-12

    def score(t: float) -> float:
        return float(np.sum(values / (1.0 + t * values)))

    oracle = optimize.brentq(score, lo, hi, xtol=1e-14)
    assert solve_el_multiplier(mm).t[0] == pytest.approx(oracle, abs=1e-8)


def test_el_weights_are_positive_and_normalised() -> None:
    w = el_weights(_rows(-1.0, 2.0), [0.25])
    assert w == pytest.approx([2.0 / 3.0, 1.0 / 3.0])
    assert w.sum() == pytest.approx(1.0)


# ── ETEL log-likelihood and dispatch ─────────────────────────────


def test_etel_loglik_zero_when_moments_average_to_zero() -> None:
    assert etel_loglik(_rows(-1.0, 1.0)) == pytest.approx(0.0, abs=1e-14)


def test_etel_loglik_two_point_value() -> None:
    expected = -math.log((2.0**0.5 + 2.0**-0.5) / 2.0)
    assert etel_loglik(_rows(-1.0, 2.0)) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(-0.05889, abs=1e-5)


def test_etel_loglik_matches_log_weights() -> None:
    rng = np.random.default_rng(8)
    x = rng.standard_normal(40)
    mm = MomentMatrix.from_rows(np.column_stack([x + 0.1, x * x - 1.1]))
    sol = solve_et_multiplier(mm)
    value = etel_loglik(mm, tilt=sol)
    assert mm.n * value == pytest.approx(
        float(np.sum(np.log(sol.weights)) + mm.n * math.log(mm.n)), abs=1e-9
    )


def test_tilt_dispatches_on_method() -> None:
    mm = _rows(-1.0, 2.0)
    assert tilt("el", mm).method is Method.EL
    assert tilt(Method.ET, mm).method is Method.ET
    assert tilt(Method.ETEL, mm).method is Method.ET


def test_tolerance_is_validated() -> None:
    with pytest.raises(ValueError, match="tol must be > 0"):
        solve_et_multiplier(_rows(-1.0, 1.0), tol=0.0)
