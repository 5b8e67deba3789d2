import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import jacobi_eigh, sign_fix

from robustmvp.errors import InvalidSpec, InvalidTau, LengthMismatch
from robustmvp.factors import (
    DegenerateSpectrumWarning,
    RobustPcaConfig,
    fit_robust_factors,
    huber_weight,
    ic_penalty,
    information_criterion,
    pca_step,
    residuals,
    select_num_factors,
    weighted_scatter,
)
from robustmvp.simlab import DgpSpec, gen_dgp
from robustmvp.types import FactorFit, ReturnPanel


@pytest.mark.parametrize("norm, tau, expected", [(1.0, 2.0, 0.5), (4.0, 2.0, 0.25), (2.0, 2.0, 0.5)])
def test_huber_weight_examples(norm, tau, expected):
    assert huber_weight(norm, tau) == expected


@pytest.mark.parametrize("tau", [0.0, -1.0, np.nan])
def test_huber_weight_invalid_tau(tau):
    with pytest.raises(InvalidTau):
        huber_weight(1.0, tau)


@given(
    st.floats(0, 1e6, allow_nan=False),
    st.floats(0, 1e6, allow_nan=False),
    st.floats(1e-6, 1e6, allow_nan=False),
)
def test_huber_weight_monotone_and_flat(n1, n2, tau):
    lo, hi = sorted((n1, n2))
    assert huber_weight(hi, tau) <= huber_weight(lo, tau)
    assert 0 < huber_weight(hi, tau) <= 0.5
    if hi <= tau:
        assert huber_weight(hi, tau) == 0.5


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.sampled_from([0.5, 2.0, 4.0, 1024.0]))
def test_huber_weight_scale_equivariant(n, tau, c):
    # powers of two keep c*n and c*tau exact
    assert huber_weight(c * n, c * tau) == huber_weight(n, tau)


def test_weighted_scatter_examples():
    V = weighted_scatter(np.array([[1.0, 2.0]]), [0.5])
    np.testing.assert_array_equal(V, 0.5 * np.array([[1.0, 2.0], [2.0, 4.0]]))
    R = np.random.default_rng(1).standard_normal((7, 3))
    np.testing.assert_allclose(weighted_scatter(R, np.full(7, 0.5)), 0.5 * R.T @ R / 7, atol=1e-15)
    np.testing.assert_array_equal(weighted_scatter(R, np.zeros(7)), np.zeros((3, 3)))
    V = weighted_scatter(R, np.random.default_rng(2).uniform(0.1, 0.5, 7))
    assert np.array_equal(V, V.T)
    with pytest.raises(LengthMismatch):
        weighted_scatter(R, np.ones(6))


def test_pca_step_diagonal():
    step = pca_step(np.diag([4.0, 1.0]), 1)
    np.testing.assert_allclose(step.loadings[:, 0], [np.sqrt(2), 0.0], atol=1e-15)
    assert not step.degenerate


def test_pca_step_identity_flags_degeneracy():
    with pytest.warns(DegenerateSpectrumWarning):
        a = pca_step(np.eye(4), 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrumWarning)
        b = pca_step(np.eye(4), 1)
    assert a.degenerate
    np.testing.assert_array_equal(a.loadings, b.loadings)
    assert np.isclose(np.linalg.norm(a.loadings), 2.0)


def test_pca_step_matches_jacobi_oracle():
    A = np.random.default_rng(42).standard_normal((5, 5))
    A = 0.5 * (A + A.T)
    vals, vecs = jacobi_eigh(A)
    for m in (1, 2, 3):
        step = pca_step(A, m)
        np.testing.assert_allclose(step.loadings, np.sqrt(5) * sign_fix(vecs[:, :m]), atol=1e-8)
        np.testing.assert_allclose(step.eigenvalues, vals, atol=1e-10)


@given(st.integers(2, 12), st.integers(1, 4), st.integers(0, 2**31))
def test_pca_step_identification(p, m, seed):
    m = min(m, p)
    A = np.random.default_rng(seed).standard_normal((p, p + 3))
    B = pca_step(A @ A.T, m).loadings
    assert np.linalg.norm(B.T @ B / p - np.eye(m)) <= 1e-8


def test_poet_reduction_loadings_equal_classic_pca(rng):
    from conftest import factor_panel

    R = factor_panel(rng, T=60, p=15, m=3)
    fit = fit_robust_factors(ReturnPanel.from_array(R), RobustPcaConfig(num_factors=3, quantile_q=1.0))
    np.testing.assert_array_equal(fit.omega, np.full(60, 0.5))
    vals, vecs = jacobi_eigh(R.T @ R)
    np.testing.assert_allclose(fit.loadings, np.sqrt(15) * sign_fix(vecs[:, :3]), atol=1e-8)


@given(st.integers(0, 2**31), st.integers(1, 3))
def test_poet_reduction_subspace(seed, m):
    from conftest import factor_panel

    R = factor_panel(np.random.default_rng(seed), T=40, p=12, m=3)
    fit = fit_robust_factors(R, RobustPcaConfig(num_factors=m, quantile_q=1.0))
    _, vecs = np.linalg.eigh(R.T @ R)
    U = vecs[:, ::-1][:, :m]
    Q = fit.loadings / np.sqrt(12)
    cosines = np.linalg.svd(U.T @ Q, compute_uv=False)
    assert np.max(np.arccos(np.clip(cosines, -1, 1))) <= 1e-6
    # principal angles near zero are ill-conditioned in arccos; check sines directly
    assert np.linalg.norm(Q - U @ (U.T @ Q)) <= 1e-8


def test_noiseless_rank_one_panel():
    rng = np.random.default_rng(3)
    p, T = 10, 30
    b = rng.standard_normal(p)
    b *= np.sqrt(p) / np.linalg.norm(b)
    R = np.outer(rng.standard_normal(T), b)
    fit = fit_robust_factors(R, RobustPcaConfig(num_factors=1))
    assert fit.converged and fit.iterations == 1
    assert fit.final_delta < 1e-20
    np.testing.assert_allclose(np.abs(fit.loadings[:, 0]), np.abs(b), atol=1e-10)
    np.testing.assert_allclose(residuals(R, fit), 0.0, atol=1e-10)


def test_dgp2_shocked_dates_downweighted():
    spec = DgpSpec(dgp_id=2, p=50, T=100, seed=1)
    train, _, _ = gen_dgp(spec, 0)
    fit = fit_robust_factors(train, RobustPcaConfig(num_factors=2))
    shocked = spec.hetero_dates - 1
    assert np.all(fit.omega[shocked] < 0.5)
    unshocked = np.delete(fit.omega, shocked)
    assert np.median(unshocked) == 0.5
    assert np.linalg.norm(fit.loadings.T @ fit.loadings / 50 - np.eye(2)) <= 1e-8


def _ic_by_svd(R, w, M):
    Rt = np.sqrt(w)[:, None] * R
    T, p = R.shape
    s = np.linalg.svd(Rt, compute_uv=False)
    total = np.sum(s**2)
    return np.array([np.log(max(np.sum(s[m:] ** 2), 1e-12 * total) / (p * T)) + m * ic_penalty(T, p) for m in range(M + 1)])


def test_select_num_factors_noiseless_rank_two():
    rng = np.random.default_rng(5)
    R = rng.standard_normal((40, 2)) @ rng.standard_normal((2, 15))
    assert select_num_factors(R, np.full(40, 0.5), 5) == 2


def test_select_num_factors_pure_noise():
    R = np.random.default_rng(11).standard_normal((200, 20))
    w = np.full(200, 0.5)
    curve = information_criterion(R, w, 5)
    np.testing.assert_allclose(curve, _ic_by_svd(R, w, 5), atol=1e-10)
    assert select_num_factors(R, w, 5) == 0 == int(np.argmin(_ic_by_svd(R, w, 5)))


def test_select_num_factors_zero_candidates():
    assert select_num_factors(np.random.default_rng(0).standard_normal((10, 4)), np.full(10, 0.5), 0) == 0


@given(st.integers(0, 2**31))
def test_information_criterion_matches_svd(seed):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((30, 3)) @ rng.standard_normal((3, 12)) + 0.2 * rng.standard_normal((30, 12))
    w = rng.uniform(0.05, 0.5, 30)
    np.testing.assert_allclose(information_criterion(R, w, 5), _ic_by_svd(R, w, 5), atol=1e-8)


def test_residuals_null_model_and_orthogonality():
    R = np.random.default_rng(7).standard_normal((25, 6))
    null = FactorFit(np.zeros((6, 0)), np.zeros((25, 0)), np.full(25, 0.5), 1.0, 0, 0, 0.0)
    np.testing.assert_array_equal(residuals(R, null), R)
    fit = fit_robust_factors(R, RobustPcaConfig(num_factors=2, quantile_q=1.0))
    E = residuals(R, fit)
    assert np.max(np.linalg.norm(E.T @ fit.factors / 25, axis=0)) <= 1e-10


@given(st.integers(0, 2**31), st.sampled_from([0.5, 0.8, 0.9]))
def test_fit_invariants(seed, q):
    from conftest import factor_panel

    R = factor_panel(np.random.default_rng(seed), T=50, p=12, m=2)
    cfg = RobustPcaConfig(num_factors="auto", quantile_q=q)
    fit = fit_robust_factors(R, cfg)
    again = fit_robust_factors(R, cfg)
    assert np.array_equal(fit.loadings, again.loadings) and np.array_equal(fit.omega, again.omega)
    if fit.num_factors:
        assert np.linalg.norm(fit.loadings.T @ fit.loadings / 12 - np.eye(fit.num_factors)) <= 1e-8
    assert np.all((fit.omega > 0) & (fit.omega <= 0.5))
    if fit.converged:
        assert fit.final_delta < cfg.tol
    assert len(fit.objective_trace) == fit.iterations + 1


def test_max_iter_is_not_an_error():
    spec = DgpSpec(dgp_id=4, p=30, T=80, seed=2)
    train, _, _ = gen_dgp(spec, 0)
    fit = fit_robust_factors(train, RobustPcaConfig(num_factors=2, max_iter=1, tol=0.0))
    assert fit.iterations == 1 and not fit.converged and fit.final_delta >= 0


def test_config_validation():
    with pytest.raises(InvalidSpec):
        RobustPcaConfig(quantile_q=0.0)
    with pytest.raises(InvalidSpec):
        RobustPcaConfig(num_factors="many")
    with pytest.raises(InvalidSpec):
        RobustPcaConfig(max_iter=0)
    with pytest.raises(InvalidSpec):
        fit_robust_factors(np.ones((3, 4)), RobustPcaConfig(num_factors=4))
