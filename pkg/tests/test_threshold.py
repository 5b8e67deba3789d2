import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import soft_threshold_loops, theta_loops

from robustmvp.errors import DimensionMismatch, InvalidCTau, InvalidSpec, NoFeasibleCTau
from robustmvp.threshold import (
    PD_FLOOR,
    ThresholdConfig,
    adaptive_threshold,
    cross_validate_c_tau,
    cv_splits,
    estimate_residual_cov,
    sample_residual_cov,
    shrink,
    theta_hat,
    threshold_residuals,
    varsigma,
)


def test_sample_residual_cov_examples():
    np.testing.assert_array_equal(sample_residual_cov(np.eye(2)), 0.5 * np.eye(2))
    np.testing.assert_array_equal(sample_residual_cov(np.zeros((4, 3))), np.zeros((3, 3)))
    with pytest.raises(DimensionMismatch):
        sample_residual_cov(np.ones((1, 3)))


@given(st.integers(2, 20), st.integers(2, 8), st.integers(0, 2**31))
def test_sample_residual_cov_gram(T, p, seed):
    E = np.random.default_rng(seed).standard_normal((T, p))
    S = sample_residual_cov(E)
    assert np.array_equal(S, S.T)
    assert np.linalg.eigvalsh(S)[0] >= -1e-12


def test_theta_examples():
    E = np.ones((4, 3)) * np.array([1.0, 2.0, -1.0])
    np.testing.assert_allclose(theta_hat(E, sample_residual_cov(E)), 0.0, atol=1e-15)
    E = np.array([[1.0, 1.0], [-1.0, 1.0]])
    S = sample_residual_cov(E)
    assert S[0, 1] == 0.0
    assert theta_hat(E, S)[0, 1] == 1.0


def test_theta_matches_double_loop():
    E = np.random.default_rng(3).standard_normal((5, 3))
    S_ref, th_ref = theta_loops(E)
    S = sample_residual_cov(E)
    np.testing.assert_allclose(S, S_ref, atol=1e-12)
    np.testing.assert_allclose(theta_hat(E, S), th_ref, atol=1e-12)


def test_varsigma_natural_log():
    assert varsigma(50, 100) == pytest.approx(1 / math.sqrt(50) + math.sqrt(math.log(50) / 100), rel=1e-15)


def test_adaptive_threshold_formula_example():
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    # theta chosen so tau_12 = 0.2 exactly: c * s_T * sqrt(theta)
    s_T = varsigma(2, 10)
    theta = np.full((2, 2), (0.2 / s_T) ** 2)
    soft = adaptive_threshold(S, theta, 1.0, 2, 10, "soft")
    hard = adaptive_threshold(S, theta, 1.0, 2, 10, "hard")
    assert soft.matrix[0, 1] == pytest.approx(0.3, abs=1e-15)
    assert hard.matrix[0, 1] == 0.5
    assert soft.matrix[0, 0] == hard.matrix[0, 0] == 1.0


def test_threshold_limits():
    E = np.random.default_rng(4).standard_normal((30, 6))
    S = sample_residual_cov(E)
    none = threshold_residuals(E, 0.0, "soft")
    np.testing.assert_array_equal(none.matrix, S)
    full = threshold_residuals(E, 1e6, "soft")
    np.testing.assert_array_equal(full.matrix, np.diag(np.diag(S)))
    assert full.sparsity == 1.0


def test_threshold_matches_loop_oracle():
    E = np.random.default_rng(9).standard_normal((12, 5))
    np.testing.assert_allclose(threshold_residuals(E, 0.5).matrix, soft_threshold_loops(E, 0.5), atol=1e-13)


def test_invalid_c_tau():
    E = np.random.default_rng(0).standard_normal((10, 3))
    with pytest.raises(InvalidCTau):
        threshold_residuals(E, -0.1)
    with pytest.raises(InvalidCTau):
        ThresholdConfig(c_tau="auto")
    with pytest.raises(InvalidSpec):
        ThresholdConfig(cv_grid=(0.5, 0.2))
    with pytest.raises(InvalidSpec):
        ThresholdConfig(cv_folds=1)


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_subnormal=True)


@given(finite, st.floats(0, 1e3, allow_nan=False), st.sampled_from(["soft", "hard"]))
def test_shrink_contract(z, tau, rule):
    out = float(shrink(np.array([z]), np.array([tau]), rule)[0])
    assert abs(out - z) <= tau
    if abs(z) <= tau:
        assert out == 0.0


@given(st.integers(0, 2**31))
def test_hard_dominates_soft_and_sparsity_monotone(seed):
    E = np.random.default_rng(seed).standard_normal((25, 6))
    soft = threshold_residuals(E, 0.7, "soft").matrix
    hard = threshold_residuals(E, 0.7, "hard").matrix
    assert np.all(np.abs(hard) >= np.abs(soft))
    zeros = [threshold_residuals(E, c).sparsity for c in (0.0, 0.3, 0.6, 1.0, 2.0, 5.0)]
    assert zeros == sorted(zeros)
    assert np.max(np.abs(soft - soft.T)) <= 1e-14


def test_cv_splits_sizes_and_determinism():
    a = list(cv_splits(90, 5, 7))
    b = list(cv_splits(90, 5, 7))
    assert len(a) == 5
    for (tr, va), (tr2, va2) in zip(a, b):
        assert len(tr) == 60 and len(va) == 30
        assert not set(tr) & set(va)
        assert np.array_equal(tr, tr2) and np.array_equal(va, va2)


def _cv_curve_brute(E, grid, folds, seed):
    loss = np.zeros(len(grid))
    for tr, va in cv_splits(E.shape[0], folds, seed):
        EA, EB = E[tr], E[va]
        SB = EB.T @ EB / len(va)
        for k, c in enumerate(grid):
            est = soft_threshold_loops(EA, c)
            loss[k] += np.sum((est - SB) ** 2)
    return loss / folds


def test_cv_curve_matches_brute_force():
    E = np.random.default_rng(21).standard_normal((30, 4))
    cfg = ThresholdConfig(c_tau="cv", cv_grid=(0.2, 0.6, 1.0, 1.4), cv_folds=3, cv_seed=5)
    c_star, diag = cross_validate_c_tau(E, cfg)
    brute = _cv_curve_brute(E, cfg.cv_grid, 3, 5)
    np.testing.assert_allclose(diag.loss, brute, rtol=1e-10)
    assert c_star == cfg.cv_grid[int(np.argmin(brute))]


def test_cv_prefers_heavy_shrinkage_for_diagonal_population():
    # With a diagonal population, zeroing every off-diagonal is optimal; the
    # chosen constant should shrink (almost) all of them.
    sparsities = []
    for seed in range(40):
        E = np.random.default_rng(seed).standard_normal((90, 10))
        c_star, _ = cross_validate_c_tau(E, ThresholdConfig(c_tau="cv"))
        sparsities.append(threshold_residuals(E, c_star).sparsity)
    assert np.median(sparsities) >= 0.9
    assert np.median(sparsities) > threshold_residuals(np.random.default_rng(0).standard_normal((90, 10)), 0.1).sparsity


def test_cv_single_feasible_value():
    E = np.random.default_rng(2).standard_normal((40, 5))
    cfg = ThresholdConfig(c_tau="cv", cv_grid=(0.8,))
    c_star, diag = cross_validate_c_tau(E, cfg)
    assert c_star == 0.8 and diag.c_lower == 0.8


def test_cv_no_feasible_value():
    # A block of identical +-1 columns: products are constant, so theta = 0,
    # the singular block is never shrunk and every fold is indefinite.
    rng = np.random.default_rng(8)
    z = rng.choice([-1.0, 1.0], size=(60, 1))
    E = np.hstack([np.repeat(z, 4, axis=1), rng.standard_normal((60, 4))])
    with pytest.raises(NoFeasibleCTau) as info:
        cross_validate_c_tau(E, ThresholdConfig(c_tau="cv"))
    curve = info.value.curve
    assert curve is not None and not curve.feasible.any()
    assert np.all(curve.min_eig <= PD_FLOOR)


def test_estimate_residual_cov_cv_path():
    E = np.random.default_rng(6).standard_normal((60, 8))
    est, diag = estimate_residual_cov(E, ThresholdConfig(c_tau="cv", cv_seed=1))
    again, _ = estimate_residual_cov(E, ThresholdConfig(c_tau="cv", cv_seed=1))
    assert est.c_tau == diag.c_star == again.c_tau
    assert np.array_equal(est.matrix, again.matrix)
    fixed, none = estimate_residual_cov(E, ThresholdConfig(c_tau=0.5))
    assert none is None and fixed.c_tau == 0.5
