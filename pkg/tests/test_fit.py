from __future__ import annotations

import math

import numpy as np
import pytest

from multiseq.core import TestSpec, make_spec, row_constant_lambdas
from multiseq.errors import OptimizationError, SpecError
from multiseq.fit import (
    CalibrationTarget,
    calibrate,
    exact_evaluator,
    heuristic_start,
    mc_evaluator,
    nelder_mead,
    relative_distance,
    row_ties,
    symmetric_row_ties,
    tie_lambdas,
)
from multiseq.models import bernoulli


def rosenbrock(x: np.ndarray) -> float:
    return float((1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2)


class TestNelderMead:
    def test_quadratic(self):
        result = nelder_mead(lambda x: float(np.sum((x - np.array([1.0, -2.0, 0.5])) ** 2)), [0.0, 0.0, 0.0], 2000, 1e-8, 1e-12)
        assert result.converged
        np.testing.assert_allclose(result.x, [1.0, -2.0, 0.5], atol=1e-4)

    def test_rosenbrock(self):
        result = nelder_mead(rosenbrock, [-1.2, 1.0], 5000, 1e-8, 1e-12, initial_step=0.5)
        np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-3)

    def test_history_is_monotone(self):
        result = nelder_mead(rosenbrock, [-1.2, 1.0], 300, 1e-8, 1e-12)
        assert len(result.history) == result.evaluations
        assert all(later <= earlier for earlier, later in zip(result.history, result.history[1:]))
        assert result.value == result.history[-1]

    def test_budget_exhaustion_is_reported(self):
        result = nelder_mead(rosenbrock, [-1.2, 1.0], 10, 1e-12, 1e-14)
        assert not result.converged
        assert result.evaluations <= 12

    def test_target_value_stops_early(self):
        result = nelder_mead(lambda x: float(abs(x[0] - 3.0)), [0.0], 500, 1e-10, 1e-12, initial_step=1.0, target_value=0.5)
        assert result.converged
        assert result.value <= 0.5
        assert result.evaluations < 20

    def test_non_finite_trials_are_penalized(self):
        def guarded(x: np.ndarray) -> float:
            return math.nan if x[0] < 0.0 else float((x[0] - 1.0) ** 2)

        result = nelder_mead(guarded, [0.2], 500, 1e-8, 1e-12)
        assert result.x[0] == pytest.approx(1.0, abs=1e-3)

    def test_rejects_non_finite_start(self):
        with pytest.raises(OptimizationError):
            nelder_mead(lambda x: math.inf, [0.0, 0.0], 100, 1e-6, 1e-6)


class TestTies:
    def test_row_ties(self):
        assert row_ties([[0, 2], [1]], 3) == (((0, 1), (0, 2), (2, 0), (2, 1)), ((1, 0), (1, 2)))

    def test_row_ties_rejects_repeats(self):
        with pytest.raises(SpecError):
            row_ties([[0], [0, 1]], 3)

    def test_symmetric_row_ties(self):
        assert symmetric_row_ties(3) == row_ties([[0, 2], [1]], 3)
        assert len(symmetric_row_ties(4)) == 2

    def test_tie_lambdas(self):
        matrix = tie_lambdas(row_constant_lambdas([2.0, 2.0, 2.0]), row_ties([[0, 2], [1]], 3), [math.log(10.0), math.log(4.0)])
        np.testing.assert_allclose(matrix, [[0.0, 10.0, 10.0], [4.0, 0.0, 4.0], [10.0, 10.0, 0.0]])


class TestRelativeDistance:
    def test_vector(self):
        assert relative_distance([0.011, 0.05], [0.01, 0.05]) == pytest.approx(0.1)

    def test_matrix_ignores_diagonal_and_unconstrained(self):
        target = np.array([[np.nan, 0.02, np.nan], [0.02, 0.5, 0.02], [np.nan, 0.02, np.nan]])
        achieved = np.array([[0.9, 0.021, 0.3], [0.02, 0.1, 0.02], [0.0, 0.02, 0.9]])
        assert relative_distance(achieved, target) == pytest.approx(0.05)

    def test_shape_mismatch(self):
        with pytest.raises(SpecError):
            relative_distance([0.1, 0.1], [0.1, 0.1, 0.1])


class TestCalibration:
    @pytest.fixture
    def template(self) -> TestSpec:
        return make_spec([0.3, 0.5, 0.7], [0.4, 0.6], [0.5, 0.5], row_constant_lambdas([10.0, 10.0, 10.0]), 150, None, bernoulli())

    def test_target_validation(self):
        with pytest.raises(SpecError):
            CalibrationTarget(targets=np.array([0.05, 1.2, 0.05]), tolerance=0.01, ties=symmetric_row_ties(3))
        with pytest.raises(SpecError):
            CalibrationTarget(targets=np.array([np.nan, np.nan]), tolerance=0.01, ties=row_ties([[0], [1]], 2))

    def test_heuristic_start(self, template: TestSpec):
        target = CalibrationTarget(targets=np.array([0.05, 0.02, 0.05]), tolerance=0.01, ties=symmetric_row_ties(3))
        np.testing.assert_allclose(heuristic_start(template, target), [math.log(20.0), math.log(50.0)])

    def test_exact_calibration_reaches_targets(self, template: TestSpec):
        target = CalibrationTarget(targets=np.array([0.05, 0.1, 0.05]), tolerance=0.05, ties=symmetric_row_ties(3))
        result = calibrate(template, target, exact_evaluator("dbc"), max_evals=300, xtol=1e-6, ftol=1e-8)
        assert result.converged
        assert result.distance <= 0.05
        np.testing.assert_allclose(result.report.alpha_i, [0.05, 0.1, 0.05], rtol=0.0501)
        lambdas = result.spec.lambda_matrix
        assert lambdas[0, 1] == pytest.approx(lambdas[2, 0])
        assert all(later <= earlier for earlier, later in zip(result.history, result.history[1:]))

    def test_achieved_target_converges_at_start(self, three_spec: TestSpec):
        """目标取已知规格的实际αᵢ、初始点取其log λ时，第一次评估即收敛。"""

        evaluator = exact_evaluator("dbc")
        achieved = evaluator(three_spec).alpha_i
        target = CalibrationTarget(targets=achieved, tolerance=1e-9, ties=row_ties([[0], [1], [2]], 3))
        x0 = np.log([20.0, 15.0, 20.0])
        result = calibrate(three_spec, target, evaluator, max_evals=50, xtol=1e-8, ftol=1e-10, x0=x0)
        assert result.converged
        assert result.evaluations == 1
        assert result.distance == pytest.approx(0.0, abs=1e-9)
        np.testing.assert_allclose(result.spec.lambda_matrix, three_spec.lambda_matrix, rtol=1e-12)

    def test_optimal_evaluator(self, template: TestSpec):
        target = CalibrationTarget(targets=np.array([0.05, 0.1, 0.05]), tolerance=0.05, ties=symmetric_row_ties(3))
        result = calibrate(template, target, exact_evaluator("optimal", 150), max_evals=300, xtol=1e-6, ftol=1e-8)
        assert result.distance <= 0.05

    def test_monte_carlo_evaluator_is_deterministic(self, template: TestSpec):
        evaluator = mc_evaluator(reps=400, seed=11, cap=150, block_size=200)
        first = evaluator(template)
        second = evaluator(template)
        np.testing.assert_array_equal(first.accept, second.accept)

    def test_unknown_evaluator(self):
        with pytest.raises(SpecError):
            exact_evaluator("bayes")
