import json

import jsonschema
import numpy as np
import pytest
from conftest import factor_panel
from hypothesis import given, settings
from hypothesis import strategies as st

from robustmvp.artifacts import (
    FACTOR_FIT_SCHEMA,
    SIGMA_E_SCHEMA,
    factor_fit_doc,
    factor_fit_from_doc,
    read_json,
    read_panel_csv,
    read_weights_csv,
    sparse_cov_doc,
    sparse_cov_from_doc,
    write_json,
    write_panel_csv,
    write_weights_csv,
)
from robustmvp.errors import DataError, DimensionMismatch
from robustmvp.factors import RobustPcaConfig, fit_robust_factors
from robustmvp.threshold import threshold_residuals
from robustmvp.types import FactorFit, ReturnPanel


def _same_fit(a: FactorFit, b: FactorFit):
    for name in ("loadings", "factors", "omega", "factor_cov"):
        x, y = getattr(a, name), getattr(b, name)
        assert x.shape == y.shape and np.array_equal(x, y)
    for name in ("tau", "num_factors", "iterations", "final_delta", "converged", "objective_trace", "degenerate"):
        assert getattr(a, name) == getattr(b, name)


@settings(max_examples=15)
@given(st.integers(0, 2**31), st.sampled_from([1, 2, 3]), st.sampled_from([0.7, 0.9, 1.0]))
def test_factor_fit_round_trip_is_exact(tmp_path_factory, seed, m, q):
    R = factor_panel(np.random.default_rng(seed), T=30, p=8)
    fit = fit_robust_factors(R, RobustPcaConfig(num_factors=m, quantile_q=q))
    path = tmp_path_factory.mktemp("fit") / "factor_fit.json"
    write_json(path, factor_fit_doc(fit), FACTOR_FIT_SCHEMA)
    _same_fit(fit, factor_fit_from_doc(read_json(path, FACTOR_FIT_SCHEMA)))


def test_zero_factor_fit_round_trip(tmp_path):
    fit = FactorFit(np.zeros((4, 0)), np.zeros((6, 0)), np.full(6, 0.5), 1.0, 0, 0, 0.0)
    write_json(tmp_path / "f.json", factor_fit_doc(fit, ["a", "b", "c", "d"]), FACTOR_FIT_SCHEMA)
    back = factor_fit_from_doc(read_json(tmp_path / "f.json"))
    assert back.loadings.shape == (4, 0) and back.factors.shape == (6, 0)


@given(st.integers(0, 2**31), st.floats(0.0, 3.0), st.sampled_from(["soft", "hard"]))
def test_sparse_cov_round_trip_is_exact(seed, c, rule):
    E = np.random.default_rng(seed).standard_normal((25, 5))
    cov = threshold_residuals(E, c, rule)
    doc = json.loads(json.dumps(sparse_cov_doc(cov, list("abcde")), default=lambda x: x.tolist()))
    jsonschema.validate(doc, SIGMA_E_SCHEMA)
    back = sparse_cov_from_doc(doc)
    assert np.array_equal(back.matrix, cov.matrix) and back.c_tau == cov.c_tau and back.rule == cov.rule


def test_write_json_validates(tmp_path):
    with pytest.raises(jsonschema.ValidationError):
        write_json(tmp_path / "bad.json", {"matrix": [[1.0]]}, SIGMA_E_SCHEMA)
    assert not (tmp_path / "bad.json").exists()


def test_panel_csv_round_trip(tmp_path):
    R = np.random.default_rng(0).standard_normal((7, 3)) * 0.01
    panel = ReturnPanel(R, ["x", "y", "z"], list(range(10, 17)))
    write_panel_csv(tmp_path / "p.csv", panel)
    values, ids, index = read_panel_csv(tmp_path / "p.csv")
    assert np.array_equal(values, R) and ids == ["x", "y", "z"] and index == list(range(10, 17))


def test_panel_csv_missing_and_bad_cells(tmp_path):
    (tmp_path / "gap.csv").write_text("date,a,b\n2020-01-02,0.01,\n2020-01-03,0.02,0.01\n")
    values, ids, index = read_panel_csv(tmp_path / "gap.csv")
    assert np.isnan(values[0, 1]) and index == ["2020-01-02", "2020-01-03"]
    (tmp_path / "bad.csv").write_text("t,a\n1,abc\n")
    with pytest.raises(DataError, match="'a'"):
        read_panel_csv(tmp_path / "bad.csv")
    (tmp_path / "ragged.csv").write_text("t,a,b\n1,0.1\n")
    with pytest.raises(DimensionMismatch):
        read_panel_csv(tmp_path / "ragged.csv")
    with pytest.raises(DataError):
        read_panel_csv(tmp_path / "missing.csv")


def test_weights_csv_round_trip(tmp_path):
    w = np.array([0.1, 0.2, 0.7]) / 1.0000001
    write_weights_csv(tmp_path / "w.csv", ["a", "b", "c"], w)
    ids, back = read_weights_csv(tmp_path / "w.csv")
    assert ids == ["a", "b", "c"] and np.array_equal(back, w)
