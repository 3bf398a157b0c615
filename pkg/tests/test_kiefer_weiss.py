from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from multiseq.bernoulli_exact import dbc_lattice, oc_ess_curve, tabulate_policy
from multiseq.classic import two_sprt
from multiseq.core import TestSpec, lagrangian, make_spec, row_constant_lambdas
from multiseq.errors import SpecError
from multiseq.kiefer_weiss import ess_argmax, ess_on_grid, kw_check, kw_fixed_point
from multiseq.models import Model, ModelKind, bernoulli


@pytest.fixture
def kw_spec() -> TestSpec:
    return make_spec(
        [0.3, 0.5, 0.7],
        [0.4026, 0.5974],
        [0.5, 0.5],
        row_constant_lambdas([6.582, 5.964, 6.582]),
        120,
        None,
        bernoulli(),
    )


class TestEssArgmax:
    def test_single_peak_between_two_hypotheses(self, two_spec: TestSpec):
        policy = dbc_lattice(two_spec)
        maxima = ess_argmax(policy, (0.3, 0.6), 0.01, 1e-6)
        assert len(maxima) == 1
        point, value = maxima[0]
        assert 0.3 < point < 0.6
        grid = np.linspace(0.305, 0.595, 59)
        assert value >= ess_on_grid(policy, grid).max() - 1e-9

    def test_symmetric_maxima(self, kw_spec: TestSpec):
        policy = dbc_lattice(kw_spec)
        maxima = ess_argmax(policy, (0.3, 0.7), 0.01, 1e-6)
        points = [point for point, _ in maxima]
        for point in points:
            assert min(abs(point + other - 1.0) for other in points) < 1e-3

    def test_grid_matches_curve(self, kw_spec: TestSpec):
        policy = dbc_lattice(kw_spec)
        grid = np.linspace(0.31, 0.69, 77)
        expected = [ess for _, _, ess in oc_ess_curve(policy, grid, [0])]
        with ThreadPoolExecutor(max_workers=3) as executor:
            np.testing.assert_allclose(ess_on_grid(policy, grid, executor), expected)

    def test_empty_interval(self, kw_spec: TestSpec):
        with pytest.raises(SpecError):
            ess_argmax(dbc_lattice(kw_spec), (0.5, 0.5), 0.01, 1e-6)


class TestKwCheck:
    def test_dbc_design(self, kw_spec: TestSpec):
        design = kw_check(kw_spec, 120, "dbc", 0.01, 1e-6)
        assert design.max_ess == pytest.approx(max(design.report.ess_at(p) for p in design.worst_points))
        assert design.fixed_point_gap < 0.2
        assert design.report.alpha_i.shape == (3,)

    def test_optimal_has_smaller_lagrangian(self, kw_spec: TestSpec):
        dbc = kw_check(kw_spec, 120, "dbc", 0.01, 1e-6)
        optimal = kw_check(kw_spec, 120, "optimal", 0.01, 1e-6)
        assert lagrangian(optimal.report, kw_spec) <= lagrangian(dbc.report, kw_spec) + 1e-9

    def test_rejects_unknown_kind(self, kw_spec: TestSpec):
        with pytest.raises(SpecError):
            kw_check(kw_spec, 120, "msprt", 0.01, 1e-6)

    def test_rejects_normal_model(self):
        spec = make_spec([0.0, 0.5], [0.25], [1.0], [[0.0, 5.0], [5.0, 0.0]], 50, None, Model(ModelKind.NORMAL, None))
        with pytest.raises(SpecError):
            kw_check(spec, 50, "dbc", 0.01, 1e-6)


class TestFixedPoint:
    def test_symmetric_iteration(self):
        design = kw_fixed_point(
            thetas=[0.3, 0.5, 0.7],
            lambda_init=[6.0, 6.0, 6.0],
            symmetric=True,
            alpha_targets=[0.1, 0.15, 0.1],
            tolerance=0.05,
            horizon=80,
            grid_step=0.01,
            refine_tol=1e-5,
            max_rounds=3,
            max_evals=80,
            xtol=1e-5,
            ftol=1e-7,
        )
        assert 1 <= design.rounds <= 3
        assert design.spec.evals[0] + design.spec.evals[1] == pytest.approx(1.0, abs=1e-9)
        assert 0.3 < design.spec.evals[0] < 0.5
        lambdas = design.spec.lambda_matrix
        assert lambdas[0, 1] == pytest.approx(lambdas[2, 1])

    def test_two_hypotheses_reduce_to_two_sprt(self):
        """k=2时设计只有一个评估点，DBC格点策略与同λ的2-SPRT逐状态一致。"""

        design = kw_fixed_point(
            thetas=[0.3, 0.6],
            lambda_init=[20.0, 20.0],
            symmetric=False,
            alpha_targets=[0.05, 0.05],
            tolerance=0.05,
            horizon=60,
            grid_step=0.01,
            refine_tol=1e-5,
            max_rounds=2,
            max_evals=60,
            xtol=1e-5,
            ftol=1e-7,
        )
        assert design.spec.big_k == 1
        assert design.spec.gammas == (1.0,)
        assert 0.3 < design.spec.evals[0] < 0.6
        lambdas = design.spec.lambda_matrix
        reference = tabulate_policy(two_sprt(float(lambdas[0, 1]), float(lambdas[1, 0])), design.spec, 60)
        dbc = dbc_lattice(design.spec, 60)
        for row_dbc, row_reference in zip(dbc.rows, reference.rows):
            np.testing.assert_array_equal(row_dbc, row_reference)

    def test_rejects_zero_rounds(self):
        with pytest.raises(SpecError):
            kw_fixed_point([0.3, 0.6], [6.0] * 2, False, [0.05] * 2, 0.05, 50, 0.01, 1e-5, 0, 20, 1e-4, 1e-5)

    def test_rejects_asymmetric_thetas(self):
        with pytest.raises(SpecError):
            kw_fixed_point([0.3, 0.5, 0.8], [6.0] * 3, True, [0.05] * 3, 0.05, 50, 0.01, 1e-5, 2, 20, 1e-4, 1e-5)

    def test_rejects_unordered_thetas(self):
        with pytest.raises(SpecError):
            kw_fixed_point([0.5, 0.3], [6.0] * 2, False, [0.05] * 2, 0.05, 50, 0.01, 1e-5, 2, 20, 1e-4, 1e-5)
