from __future__ import annotations

from decimal import Decimal, localcontext

import numpy as np
import pytest

from multiseq.bernoulli_exact import backward_optimal, evaluate, lattice_state
from multiseq.core import (
    DbcRule,
    LogLikState,
    TestSpec,
    append_observation,
    dbc_decide,
    dbc_verdict,
    initial_state,
    lagrangian,
    load_spec,
    log_risk_candidates,
    log_weighted_density,
    make_spec,
    posterior,
    posterior_risk,
    row_constant_lambdas,
    spec_from_dict,
    spec_to_dict,
)
from multiseq.errors import SpecError, UndefinedStateError
from multiseq.models import Model, ModelKind, bernoulli


class TestSpecValidation:
    def test_rejects_trivial_lambdas(self):
        """某列λ之和不超过1时直接接受即为最优，规格被拒绝。"""

        with pytest.raises(SpecError, match="非平凡性"):
            make_spec([0.3, 0.6], [0.3, 0.6], [0.5, 0.5], [[0.0, 0.5], [0.5, 0.0]], 10, None, bernoulli())

    def test_rejects_gammas_not_summing_to_one(self):
        with pytest.raises(SpecError):
            make_spec([0.3, 0.6], [0.3, 0.6], [0.5, 0.6], [[0.0, 5.0], [5.0, 0.0]], 10, None, bernoulli())

    def test_rejects_bernoulli_param_outside_unit_interval(self):
        with pytest.raises(ValueError):
            make_spec([0.3, 1.2], [0.3], [1.0], [[0.0, 5.0], [5.0, 0.0]], 10, None, bernoulli())

    def test_unbounded_requires_safety_cap(self):
        with pytest.raises(SpecError):
            make_spec([0.0, 0.5], [0.0], [1.0], [[0.0, 5.0], [5.0, 0.0]], None, None, Model(ModelKind.NORMAL, None))

    def test_safety_cap_below_horizon(self):
        with pytest.raises(SpecError):
            make_spec([0.3, 0.6], [0.3], [1.0], [[0.0, 5.0], [5.0, 0.0]], 10, 5, bernoulli())

    def test_effective_horizon(self):
        spec = make_spec([0.0, 0.5], [0.0], [1.0], [[0.0, 5.0], [5.0, 0.0]], None, 200, Model(ModelKind.NORMAL, None))
        assert spec.horizon is None
        assert spec.effective_horizon == 200


class TestSpecJson:
    def test_roundtrip(self, three_spec: TestSpec):
        assert spec_from_dict(spec_to_dict(three_spec)) == three_spec

    def test_unknown_key(self, three_spec: TestSpec):
        data = spec_to_dict(three_spec)
        data["comment"] = "x"
        with pytest.raises(SpecError, match="未知字段"):
            spec_from_dict(data)

    def test_nonzero_diagonal(self, three_spec: TestSpec):
        data = spec_to_dict(three_spec)
        data["lambdas"][1][1] = 3.0
        with pytest.raises(SpecError, match="对角线"):
            spec_from_dict(data)

    def test_unbounded_horizon(self):
        data = {
            "thetas": [0.0, -0.2, 0.1],
            "evals": [0.0, -0.2, 0.1],
            "gammas": [0.25, 0.25, 0.5],
            "lambdas": [[0, 35, 35], [18, 0, 18], [33, 33, 0]],
            "horizon": "unbounded",
            "safety_cap": 500,
            "model": {"kind": "normal_trend"},
        }
        spec = spec_from_dict(data)
        assert spec.horizon is None
        assert spec.model.kind is ModelKind.NORMAL_TREND
        assert spec_to_dict(spec)["horizon"] == "unbounded"

    def test_load_from_file(self, spec_file, three_spec: TestSpec):
        assert load_spec(spec_file) == three_spec

    def test_load_rejects_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{\"thetas\": [0.3,", encoding="utf-8")
        with pytest.raises(SpecError, match="JSON"):
            load_spec(path)

    def test_grouped_model_needs_group_size(self, three_spec: TestSpec):
        data = spec_to_dict(three_spec)
        data["model"] = {"kind": "grouped_normal"}
        with pytest.raises(SpecError):
            spec_from_dict(data)


class TestDbcRule:
    def test_never_stops_at_zero(self, three_spec: TestSpec):
        stopped, _ = dbc_decide(initial_state(three_spec), three_spec)
        assert not bool(stopped)
        assert dbc_verdict(initial_state(three_spec), three_spec).accepted is None

    def test_ties_go_to_smallest_index(self):
        spec = make_spec([0.3, 0.7], [0.3, 0.7], [0.5, 0.5], row_constant_lambdas([10.0, 10.0]), 10, None, bernoulli())
        state = LogLikState(n=4, logf_theta=np.array([-30.0, -30.0]), logf_eval=np.array([0.0, 0.0]), stat=None)
        verdict = dbc_verdict(state, spec)
        assert verdict.stopped
        assert verdict.accepted == 0
        assert int(DbcRule(spec).decide_terminal(state)) == 0

    def test_stops_on_overwhelming_evidence(self, two_spec: TestSpec):
        state = initial_state(two_spec)
        for _ in range(40):
            state = append_observation(state, two_spec, 1.0)
        verdict = dbc_verdict(state, two_spec)
        assert verdict.stopped
        assert verdict.accepted == 1

    def test_batch_matches_single_states(self, three_spec: TestSpec):
        batch = lattice_state(three_spec, 12)
        stopped, accepted = dbc_decide(batch, three_spec)
        for s in range(13):
            single = LogLikState(n=12, logf_theta=batch.logf_theta[s], logf_eval=batch.logf_eval[s], stat=None)
            verdict = dbc_verdict(single, three_spec)
            assert verdict.stopped == bool(stopped[s])
            if verdict.stopped:
                assert verdict.accepted == int(accepted[s])

    def test_underflowed_densities_still_decide(self, three_spec: TestSpec):
        state = LogLikState(
            n=5000,
            logf_theta=np.array([-4000.0, -3000.0, -4100.0]),
            logf_eval=np.array([-3500.0, -3600.0]),
            stat=None,
        )
        verdict = dbc_verdict(state, three_spec)
        assert verdict.stopped
        assert verdict.accepted == 1


class TestPosteriorForm:
    def test_equivalent_to_density_form(self):
        """评估点与假设重合时，后验风险不超过1当且仅当DBC停止。"""

        spec = make_spec(
            [0.2, 0.45, 0.7],
            [0.2, 0.45, 0.7],
            [0.2, 0.5, 0.3],
            [[0.0, 12.0, 30.0], [8.0, 0.0, 8.0], [25.0, 14.0, 0.0]],
            30,
            None,
            bernoulli(),
        )
        for n in range(1, 31):
            state = lattice_state(spec, n)
            stopped, _ = dbc_decide(state, spec)
            risk = posterior_risk(state, spec)
            clear = np.abs(np.log(risk)) > 1e-9
            np.testing.assert_array_equal(stopped[clear], (risk <= 1.0)[clear])

    def test_posterior_at_zero_is_prior(self):
        state = LogLikState(n=0, logf_theta=np.zeros(3), logf_eval=np.zeros(2), stat=None)
        np.testing.assert_allclose(posterior(state, [0.2, 0.3, 0.5]), [0.2, 0.3, 0.5])

    def test_undefined_when_all_densities_vanish(self):
        state = LogLikState(n=3, logf_theta=np.full(2, -np.inf), logf_eval=np.zeros(1), stat=None)
        with pytest.raises(UndefinedStateError):
            posterior(state, [0.5, 0.5])


def test_log_weighted_density_matches_decimal():
    logs = [-1000.0, -1001.5, -1400.0]
    gammas = [0.2, 0.5, 0.3]
    state = LogLikState(n=2000, logf_theta=np.zeros(2), logf_eval=np.array(logs), stat=None)
    with localcontext() as context:
        context.prec = 50
        exact = sum(Decimal(g) * Decimal(value).exp() for g, value in zip(gammas, logs)).ln()
    assert float(log_weighted_density(state, gammas)) == pytest.approx(float(exact), rel=1e-13)


def test_log_risk_candidates():
    state = LogLikState(n=3, logf_theta=np.log([0.2, 0.5, 0.3]), logf_eval=np.zeros(2), stat=None)
    lambdas = [[0.0, 2.0, 3.0], [4.0, 0.0, 5.0], [6.0, 7.0, 0.0]]
    np.testing.assert_allclose(np.exp(log_risk_candidates(state, lambdas)), [3.8, 2.5, 3.1])
    sparse = [[0.0, 0.0, 3.0], [4.0, 0.0, 0.0], [0.0, 7.0, 0.0]]
    np.testing.assert_allclose(np.exp(log_risk_candidates(state, sparse)), [2.0, 2.1, 0.6])


def test_log_weighted_density_all_zero_is_negative_infinity():
    state = LogLikState(n=1, logf_theta=np.zeros(2), logf_eval=np.full(2, -np.inf), stat=None)
    assert np.isneginf(log_weighted_density(state, [0.5, 0.5]))


def test_lagrangian_of_optimal_policy_equals_minimum(three_spec: TestSpec):
    policy, minimal = backward_optimal(three_spec, 40)
    report = evaluate(policy, three_spec)
    assert lagrangian(report, three_spec) == pytest.approx(minimal, rel=1e-10)


def _random_states(rng: np.random.Generator, size: int, k: int, big_k: int, low: float, high: float) -> LogLikState:
    return LogLikState(
        n=7,
        logf_theta=rng.uniform(low, high, size=(size, k)),
        logf_eval=rng.uniform(low, high, size=(size, big_k)),
        stat=None,
    )


class TestDbcInvariants:
    @pytest.mark.parametrize("scale", [1e-3, 0.37, 4.0, 1e4])
    def test_common_scaling_keeps_verdict(self, three_spec: TestSpec, scale: float):
        """λ与γ同乘c>0时停止掩码与判决不变。"""

        state = _random_states(np.random.default_rng(17), 400, 3, 2, -40.0, 0.0)
        stopped, accepted = dbc_decide(state, three_spec)
        candidates = log_risk_candidates(state, scale * three_spec.lambda_matrix)
        weighted = log_weighted_density(state, scale * three_spec.gamma_array)
        margin = np.min(candidates, axis=-1) - weighted
        clear = np.abs(margin) > 1e-9
        np.testing.assert_array_equal((margin <= 0.0)[clear], stopped[clear])
        np.testing.assert_array_equal(np.argmin(candidates, axis=-1)[stopped], accepted[stopped])

    def test_more_evidence_never_resumes(self, three_spec: TestSpec):
        """已停止的状态在logf_eval逐分量增大后仍停止，判决不变。"""

        rng = np.random.default_rng(23)
        state = _random_states(rng, 600, 3, 2, -30.0, 0.0)
        stopped, accepted = dbc_decide(state, three_spec)
        assert stopped.any()
        raised = LogLikState(
            n=state.n,
            logf_theta=state.logf_theta,
            logf_eval=state.logf_eval + rng.exponential(2.0, size=state.logf_eval.shape),
            stat=None,
        )
        still, accepted_again = dbc_decide(raised, three_spec)
        assert np.all(still[stopped])
        np.testing.assert_array_equal(accepted_again[stopped], accepted[stopped])


def _decimal_log_sum(weights, logs) -> float:
    with localcontext() as context:
        context.prec = 60
        total = sum(Decimal(float(w)) * Decimal(float(value)).exp() for w, value in zip(weights, logs) if w != 0.0)
        return float(total.ln())


def test_log_sums_match_decimal_on_wide_range():
    rng = np.random.default_rng(31)
    lambdas = [[0.0, 3.0, 40.0], [7.5, 0.0, 12.0], [25.0, 0.5, 0.0]]
    gammas = [0.1, 0.6, 0.3]
    for _ in range(40):
        state = LogLikState(
            n=100,
            logf_theta=rng.uniform(-700.0, 700.0, size=3),
            logf_eval=rng.uniform(-700.0, 700.0, size=3),
            stat=None,
        )
        expected_weighted = _decimal_log_sum(gammas, state.logf_eval)
        assert float(log_weighted_density(state, gammas)) == pytest.approx(expected_weighted, rel=1e-12, abs=1e-12)
        candidates = log_risk_candidates(state, lambdas)
        for j in range(3):
            weights = [lambdas[i][j] for i in range(3)]
            expected = _decimal_log_sum(weights, state.logf_theta)
            assert float(candidates[j]) == pytest.approx(expected, rel=1e-12, abs=1e-12)
