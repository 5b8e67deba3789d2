"""Out-of-sample performance and estimation-error measures."""

from __future__ import annotations

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, NotPositiveDefinite


def _series(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D return series, got shape {x.shape}")
    return x


def portfolio_returns(weights, returns) -> np.ndarray:
    w = _series(getattr(weights, "weights", weights))
    R = np.asarray(getattr(returns, "values", returns), dtype=np.float64)
    if R.ndim != 2 or R.shape[1] != w.shape[0]:
        raise DimensionMismatch(f"returns {R.shape} do not match {w.shape[0]} weights")
    return R @ w


def oos_risk(r) -> float:
    """Sample standard deviation with the ``1/(n-1)`` normalization."""
    r = _series(r)
    if r.shape[0] < 2:
        raise DimensionMismatch("need at least two returns for a standard deviation")
    return float(np.std(r, ddof=1))


def sharpe(r) -> float:
    """Realized mean over realized standard deviation (not annualized).

    Zero for a series that is constant up to rounding.
    """
    r = _series(r)
    sd = oos_risk(r)
    if np.ptp(r) <= 8 * np.finfo(np.float64).eps * np.max(np.abs(r)):
        return 0.0
    return float(r.mean() / sd)


def cumulative_return(r) -> float:
    """Sum of period returns."""
    return float(np.sum(_series(r)))


def max_drawdown(r) -> float:
    """``max_{t1 <= t2} (gamma_t1 - gamma_t2)`` for the running sum ``gamma``.

    Zero for an empty or nondecreasing path.
    """
    gamma = np.cumsum(_series(r))
    if gamma.size == 0:
        return 0.0
    return float(np.max(np.maximum.accumulate(gamma) - gamma))


def weight_error(w_hat, w_star) -> float:
    a = _series(getattr(w_hat, "weights", w_hat))
    b = _series(getattr(w_star, "weights", w_star))
    if a.shape != b.shape:
        raise DimensionMismatch(f"weight vectors differ in length: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def cov_error(sigma_hat, sigma) -> float:
    """``||Sigma^{-1/2} Sigma_hat Sigma^{-1/2} - I||_F``.

    Computed as ``||L^{-1} Sigma_hat L^{-T} - I||_F`` with ``Sigma = L L'``;
    the two matrices are symmetric and similar, so the norms agree.
    """
    S_hat = np.asarray(sigma_hat, dtype=np.float64)
    S = np.asarray(sigma, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S_hat.shape != S.shape:
        raise DimensionMismatch(f"covariances must be matching square matrices: {S_hat.shape} vs {S.shape}")
    if np.array_equal(S_hat, S):
        return 0.0
    try:
        L = linalg.cholesky(S, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"true covariance fails Cholesky: {exc}") from exc
    X = linalg.solve_triangular(L, S_hat, lower=True)
    M = linalg.solve_triangular(L, X.T, lower=True)
    M = 0.5 * (M + M.T)
    return float(np.linalg.norm(M - np.eye(S.shape[0]), "fro"))


def neg_weight_error(w) -> float:
    """``sum_i |w_i| 1(w_i < 0)``."""
    w = _series(getattr(w, "weights", w))
    return float(-np.sum(w[w < 0]))
