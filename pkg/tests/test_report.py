from __future__ import annotations

import csv
import io
import json

import numpy as np
import pytest

from multiseq.bernoulli_exact import dbc_lattice, evaluate
from multiseq.core import DbcRule, TestSpec
from multiseq.errors import SpecError
from multiseq.montecarlo import simulate_spec
from multiseq.report import report_from_dict, report_to_csv, report_to_dict


def test_exact_report_json_roundtrip(three_spec: TestSpec):
    report = evaluate(dbc_lattice(three_spec), three_spec, [0.55])
    restored = report_from_dict(json.loads(json.dumps(report_to_dict(report))))
    np.testing.assert_array_equal(restored.accept, report.accept)
    np.testing.assert_array_equal(restored.alpha, report.alpha)
    assert restored.weighted_ess == report.weighted_ess
    assert restored.se_ess is None
    assert restored.reps is None


def test_report_schema_is_checked(three_spec: TestSpec):
    data = report_to_dict(evaluate(dbc_lattice(three_spec), three_spec))
    data["schema"] = 99
    with pytest.raises(SpecError):
        report_from_dict(data)


def test_alpha_layout(three_spec: TestSpec):
    report = evaluate(dbc_lattice(three_spec), three_spec)
    assert report.alpha.shape == (3, 3)
    np.testing.assert_allclose(report.alpha.sum(axis=1), 1.0)
    np.testing.assert_allclose(report.alpha_i, 1.0 - np.diag(report.alpha))
    expected = 0.5 * report.ess_at(0.4) + 0.5 * report.ess_at(0.6)
    assert report.weighted_ess == pytest.approx(expected)
    assert report.oc(0.5, [1]) == pytest.approx(report.alpha[1, 1])


def test_missing_param_lookup(three_spec: TestSpec):
    report = evaluate(dbc_lattice(three_spec), three_spec)
    with pytest.raises(SpecError):
        report.ess_at(0.123)


def test_csv_rows(three_spec: TestSpec):
    report = evaluate(dbc_lattice(three_spec), three_spec)
    rows = list(csv.reader(io.StringIO(report_to_csv(report))))
    assert rows[0] == ["quantity", "param", "accepted", "estimate", "se"]
    assert sum(row[0] == "alpha" for row in rows) == 9
    assert sum(row[0] == "ess" for row in rows) == report.params.size
    weighted = [row for row in rows if row[0] == "weighted_ess"]
    assert float(weighted[0][3]) == report.weighted_ess
    assert weighted[0][4] == ""


def test_monte_carlo_csv_carries_standard_errors(three_spec: TestSpec):
    report = simulate_spec(three_spec, DbcRule(three_spec), reps=500, seed=1, cap=40, block_size=200)
    rows = list(csv.reader(io.StringIO(report_to_csv(report))))
    assert all(row[4] != "" for row in rows[1:])
    assert report.se_weighted_ess is not None
