from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from multiseq.bernoulli_exact import dbc_lattice, evaluate
from multiseq.core import DbcRule, LogLikState, TestSpec, make_spec, row_constant_lambdas
from multiseq.errors import DomainError, SpecError
from multiseq.models import Model, ModelKind, bernoulli
from multiseq.montecarlo import SimConfig, block_layout, simulate, simulate_spec, tail_curve


class TestBlockLayout:
    def test_even_split(self):
        assert block_layout(30, 10) == [10, 10, 10]

    def test_partial_last_block(self):
        assert block_layout(25, 10) == [10, 10, 5]

    def test_single_small_block(self):
        assert block_layout(3, 10) == [3]


class TestReproducibility:
    def test_thread_pool_matches_serial(self, three_spec: TestSpec):
        serial = simulate_spec(three_spec, DbcRule(three_spec), reps=3000, seed=42, cap=40, block_size=700)
        with ThreadPoolExecutor(max_workers=4) as executor:
            pooled = simulate_spec(
                three_spec, DbcRule(three_spec), reps=3000, seed=42, cap=40, block_size=700, executor=executor
            )
        np.testing.assert_array_equal(serial.accept, pooled.accept)
        np.testing.assert_array_equal(serial.ess, pooled.ess)
        np.testing.assert_array_equal(serial.stop_dist, pooled.stop_dist)

    def test_different_seeds_differ(self, three_spec: TestSpec):
        first = simulate_spec(three_spec, DbcRule(three_spec), reps=2000, seed=1, cap=40, block_size=500)
        second = simulate_spec(three_spec, DbcRule(three_spec), reps=2000, seed=2, cap=40, block_size=500)
        assert not np.array_equal(first.ess, second.ess)


class TestAgainstExact:
    def test_dbc_within_four_standard_errors(self, three_spec: TestSpec):
        exact = evaluate(dbc_lattice(three_spec), three_spec)
        mc = simulate_spec(three_spec, DbcRule(three_spec), reps=20000, seed=9, cap=40, block_size=5000)
        assert np.all(np.abs(mc.ess - exact.ess) <= 4.0 * mc.se_ess + 1e-9)
        assert np.all(np.abs(mc.accept - exact.accept) <= 4.0 * mc.se_accept + 1e-3)
        assert abs(mc.weighted_ess - exact.weighted_ess) <= 4.0 * mc.se_weighted_ess

    def test_cap_hits_match_forced_stops(self):
        spec = make_spec(
            [0.45, 0.55], [0.5], [1.0], [[0.0, 50.0], [50.0, 0.0]], 15, None, bernoulli()
        )
        exact = evaluate(dbc_lattice(spec), spec)
        mc = simulate_spec(spec, DbcRule(spec), reps=20000, seed=3, cap=15, block_size=4000)
        se = np.sqrt(exact.truncated_mass * (1.0 - exact.truncated_mass) / 20000)
        assert np.all(np.abs(mc.cap_hits - exact.truncated_mass) <= 4.0 * se + 1e-3)


class TestSingleParameter:
    def test_normal_model(self):
        spec = make_spec(
            [-0.5, 0.0, 0.5],
            [-0.25, 0.25],
            [0.5, 0.5],
            row_constant_lambdas([30.0, 30.0, 30.0]),
            None,
            500,
            Model(ModelKind.NORMAL, None),
        )
        config = SimConfig(spec=spec, rule=DbcRule(spec), reps=2000, seed=5, cap=500, block_size=1000, true_param=0.5)
        report = simulate(config)
        assert report.params.tolist() == [0.5]
        assert report.alpha is None
        assert report.accept[0, 2] > 0.8
        assert report.cap_hits[0] == 0.0
        assert report.se_ess[0] > 0.0

    def test_tail_curve_is_survival_function(self, three_spec: TestSpec):
        config = SimConfig(
            spec=three_spec, rule=DbcRule(three_spec), reps=1000, seed=8, cap=40, block_size=250, true_param=0.5
        )
        curve = tail_curve(config)
        assert curve[0] == (0, 1.0)
        assert curve[-1][1] == 0.0
        assert all(later <= earlier for (_, earlier), (_, later) in zip(curve, curve[1:]))

    def test_tail_curve_matches_exact_survival(self, three_spec: TestSpec):
        """经验生存函数与精确停止分布的最大偏差在4倍标准误以内。"""

        reps = 20000
        exact = evaluate(dbc_lattice(three_spec), three_spec)
        survival = np.clip(1.0 - np.cumsum(exact.stop_dist[exact.index_of(0.5)]), 0.0, 1.0)
        config = SimConfig(
            spec=three_spec, rule=DbcRule(three_spec), reps=reps, seed=13, cap=40, block_size=5000, true_param=0.5
        )
        empirical = np.asarray([value for _, value in tail_curve(config)])
        se = np.sqrt(survival * (1.0 - survival) / reps)
        assert np.max(np.abs(empirical - survival)) < 4.0 * np.max(se)


class StopAtFirstObservation:
    """n=1即停止并接受H₁的退化规则。"""

    def decide_batch(self, state: LogLikState):
        size = state.logf_theta.shape[0]
        return np.ones(size, dtype=bool), np.zeros(size, dtype=np.int64)

    def decide_terminal(self, state: LogLikState):
        return np.zeros(state.logf_theta.shape[0], dtype=np.int64)


def test_degenerate_rule_stops_at_one(three_spec: TestSpec):
    report = simulate_spec(three_spec, StopAtFirstObservation(), reps=500, seed=4, cap=40, block_size=128)
    np.testing.assert_array_equal(report.ess, np.ones_like(report.ess))
    np.testing.assert_array_equal(report.se_ess, np.zeros_like(report.se_ess))
    np.testing.assert_array_equal(report.accept[:, 0], np.ones(report.params.shape[0]))
    np.testing.assert_array_equal(report.alpha[:, 0], np.ones(3))
    np.testing.assert_array_equal(report.alpha[:, 1:], np.zeros((3, 2)))
    np.testing.assert_array_equal(report.alpha_i, [0.0, 1.0, 1.0])
    assert np.all(report.stop_dist[:, 1] == 1.0)
    assert np.all(report.cap_hits == 0.0)


class TestConfigValidation:
    def test_rejects_zero_reps(self, three_spec: TestSpec):
        with pytest.raises(SpecError):
            SimConfig(spec=three_spec, rule=DbcRule(three_spec), reps=0, seed=1, cap=10, block_size=10, true_param=0.5)

    def test_rejects_negative_seed(self, three_spec: TestSpec):
        with pytest.raises(SpecError):
            SimConfig(spec=three_spec, rule=DbcRule(three_spec), reps=10, seed=-1, cap=10, block_size=10, true_param=0.5)

    def test_rejects_param_outside_model(self, three_spec: TestSpec):
        with pytest.raises(DomainError):
            SimConfig(spec=three_spec, rule=DbcRule(three_spec), reps=10, seed=1, cap=10, block_size=10, true_param=1.5)
