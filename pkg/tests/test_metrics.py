import numpy as np
import pytest
from conftest import random_spd
from hypothesis import given
from hypothesis import strategies as st
from oracles import cov_error_symsqrt, mdd_all_pairs

from robustmvp.errors import DimensionMismatch, NotPositiveDefinite
from robustmvp.metrics import (
    cov_error,
    cumulative_return,
    max_drawdown,
    neg_weight_error,
    oos_risk,
    portfolio_returns,
    sharpe,
    weight_error,
)


def test_max_drawdown_example():
    assert max_drawdown([0.1, -0.2, 0.05]) == pytest.approx(0.2, abs=1e-15)
    assert max_drawdown([0.01, 0.02, 0.0]) == 0.0
    assert max_drawdown([]) == 0.0


@given(st.lists(st.floats(-0.5, 0.5), min_size=1, max_size=40))
def test_max_drawdown_matches_all_pairs(r):
    assert max_drawdown(r) == pytest.approx(mdd_all_pairs(r), abs=1e-12)
    assert max_drawdown(r) >= 0


def test_basic_series_measures():
    r = np.array([0.01, -0.02, 0.03, 0.0])
    assert cumulative_return(r) == pytest.approx(0.02, abs=1e-15)
    assert oos_risk(r) == pytest.approx(np.sqrt(np.sum((r - r.mean()) ** 2) / 3), rel=1e-14)
    assert sharpe(r) == pytest.approx(r.mean() / oos_risk(r), rel=1e-14)
    assert sharpe(np.full(5, 0.01)) == 0.0
    assert sharpe(0.001 * (1 + np.array([0.0, 1.0, -1.0, 0.0]) * 2.0**-52)) == 0.0
    with pytest.raises(DimensionMismatch):
        oos_risk([0.1])


def test_portfolio_returns_shape_check():
    R = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(portfolio_returns([0.5, 0.5], R), [0.5, 2.5, 4.5])
    with pytest.raises(DimensionMismatch):
        portfolio_returns([1.0], R)


def test_weight_error_and_negative_part():
    assert weight_error([0.5, 0.5], [1.0, 0.0]) == pytest.approx(np.sqrt(0.5), rel=1e-15)
    assert neg_weight_error([0.6, 0.6, -0.2]) == pytest.approx(0.2, abs=1e-15)
    assert neg_weight_error(np.full(4, 0.25)) == 0.0
    with pytest.raises(DimensionMismatch):
        weight_error([1.0], [0.5, 0.5])


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0, 3.0])
def test_cov_error_scaled_truth(c):
    S = random_spd(np.random.default_rng(5), 6)
    assert cov_error(c * S, S) == pytest.approx(abs(c - 1) * np.sqrt(6), abs=1e-10)


def test_cov_error_exact_zero_on_identity():
    S = random_spd(np.random.default_rng(6), 5)
    assert cov_error(S, S) == 0.0


@given(st.integers(0, 2**31), st.integers(2, 15))
def test_cov_error_matches_symmetric_root(seed, p):
    rng = np.random.default_rng(seed)
    S = random_spd(rng, p, cond=50.0)
    S_hat = random_spd(rng, p, cond=50.0)
    assert cov_error(S_hat, S) == pytest.approx(cov_error_symsqrt(S_hat, S), rel=1e-8, abs=1e-10)


def test_cov_error_requires_positive_definite_truth():
    with pytest.raises(NotPositiveDefinite):
        cov_error(np.eye(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
