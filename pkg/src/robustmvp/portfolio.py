"""Minimum variance portfolios from factor-model and baseline covariances.

Weights solve ``min W' S W`` subject to ``W' 1 = 1`` with shorting allowed:
``W = S^{-1} 1 / (1' S^{-1} 1)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import linalg

from .errors import InvalidSpec, SingularCovariance
from .factors import RobustPcaConfig, covariance_loadings, fit_robust_factors, residuals
from .threshold import CvDiagnostics, ThresholdConfig, estimate_residual_cov
from .types import FactorFit, PortfolioWeights, ReturnCovModel, ReturnPanel, SparseResidualCov

STRATEGY_KINDS = (
    "r_mvp",
    "poet_mvp",
    "sample_mvp",
    "equal_weight",
    "linear_shrinkage_mvp",
    "oracle_mvp",
)
DENOMINATOR_FLOOR = 1e-12


def assemble_sigma_r(loadings, residual_cov: SparseResidualCov) -> ReturnCovModel:
    """``L L' + Sigma_e`` with a Woodbury-structured inverse.

    Raises ``NotPositiveDefinite`` when ``Sigma_e`` fails Cholesky.
    """
    return ReturnCovModel(np.asarray(loadings, dtype=np.float64), residual_cov)


def _solve_ones(cov) -> np.ndarray:
    if isinstance(cov, ReturnCovModel):
        return cov.solve(np.ones(cov.p))
    S = np.asarray(cov, dtype=np.float64)
    try:
        factor = linalg.cho_factor(0.5 * (S + S.T), lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularCovariance(f"covariance is not positive definite: {exc}") from exc
    return linalg.cho_solve(factor, np.ones(S.shape[0]), check_finite=False)


def _denominator(x: np.ndarray) -> float:
    den = float(x.sum())
    if not np.isfinite(den) or abs(den) < DENOMINATOR_FLOOR:
        raise SingularCovariance(f"1' S^-1 1 = {den!r} is numerically zero")
    return den


def mvp_weights(cov, strategy_tag: str = "") -> PortfolioWeights:
    """Minimum variance weights for a :class:`ReturnCovModel` or dense matrix."""
    x = _solve_ones(cov)
    w = x / _denominator(x)
    return PortfolioWeights(w, strategy_tag)


def min_risk(cov) -> float:
    """Variance of the minimum variance portfolio, ``1 / (1' S^{-1} 1)``."""
    return 1.0 / _denominator(_solve_ones(cov))


def estimate_mu(fit: FactorFit) -> np.ndarray:
    """``B * mean_t(F_t)``."""
    return fit.loadings @ fit.factors.mean(axis=0)


def sharpe_estimate(cov, mu_hat) -> float:
    """Plug-in Sharpe ratio ``1' S^{-1} mu / sqrt(1' S^{-1} 1)``."""
    x = _solve_ones(cov)
    den = _denominator(x)
    if den < 0:
        raise SingularCovariance("1' S^-1 1 is negative; covariance is not positive definite")
    return float(x @ np.asarray(mu_hat, dtype=np.float64)) / np.sqrt(den)


def _centered(panel) -> np.ndarray:
    X = panel.values if isinstance(panel, ReturnPanel) else np.asarray(panel, dtype=np.float64)
    if X.shape[0] < 2:
        raise InvalidSpec("need at least two periods")
    return X - X.mean(axis=0)


def ledoit_wolf_intensity(panel) -> float:
    """Squared-error optimal weight on the scaled identity target.

    Uses the 1/T sample covariance of the demeaned data, as in the
    original closed form.
    """
    X = _centered(panel)
    T, p = X.shape
    S = X.T @ X / T
    nu = np.trace(S) / p
    d2 = np.sum((S - nu * np.eye(p)) ** 2) / p
    if d2 == 0:
        return 0.0
    row_sq = np.sum(X * X, axis=1)
    # sum_t ||x_t x_t' - S||_F^2 = sum_t ||x_t||^4 - T ||S||_F^2
    b2_bar = (np.sum(row_sq**2) - T * np.sum(S * S)) / (T * T * p)
    b2 = min(max(b2_bar, 0.0), d2)
    return float(b2 / d2)


def linear_shrinkage_cov(panel, intensity: Union[float, str] = "auto") -> np.ndarray:
    """``(1 - rho) S + rho * nu * I`` with ``nu = trace(S) / p``."""
    X = _centered(panel)
    T, p = X.shape
    rho = ledoit_wolf_intensity(X) if intensity == "auto" else float(intensity)
    if not 0.0 <= rho <= 1.0:
        raise InvalidSpec(f"shrinkage intensity must lie in [0, 1], got {intensity!r}")
    S = X.T @ X / T
    S = 0.5 * (S + S.T)
    if rho == 0.0:
        return S
    nu = np.trace(S) / p
    return (1.0 - rho) * S + rho * nu * np.eye(p)


def equal_weight(p: int) -> PortfolioWeights:
    return PortfolioWeights(np.full(p, 1.0 / p), "equal_weight")


def sample_covariance(panel) -> np.ndarray:
    X = _centered(panel)
    S = X.T @ X / (X.shape[0] - 1)
    return 0.5 * (S + S.T)


def sample_cov_mvp(panel) -> PortfolioWeights:
    X = panel.values if isinstance(panel, ReturnPanel) else np.asarray(panel)
    T, p = X.shape
    if T <= p:
        raise SingularCovariance(f"sample covariance is singular with T={T} <= p={p}")
    return mvp_weights(sample_covariance(panel), "sample_mvp")


@dataclass(frozen=True, eq=False)
class RobustEstimate:
    model: ReturnCovModel
    fit: FactorFit
    residual_cov: SparseResidualCov
    cv: Optional[CvDiagnostics] = None


def robust_covariance(
    panel: ReturnPanel,
    pca: RobustPcaConfig | None = None,
    threshold: ThresholdConfig | None = None,
) -> RobustEstimate:
    """Robust factor fit, thresholded residuals and the assembled covariance."""
    pca = pca or RobustPcaConfig()
    threshold = threshold or ThresholdConfig()
    fit = fit_robust_factors(panel, pca)
    resid_cov, cv = estimate_residual_cov(residuals(panel, fit), threshold)
    model = assemble_sigma_r(covariance_loadings(fit, pca.factor_scale), resid_cov)
    return RobustEstimate(model, fit, resid_cov, cv)


@dataclass(frozen=True)
class StrategySpec:
    """One portfolio rule.

    ``poet_mvp`` runs the robust pipeline with every period weighted one
    half (``quantile_q`` forced to 1), which is exactly the classic
    PCA-plus-thresholding estimator.
    """

    kind: str
    pca: RobustPcaConfig = field(default_factory=lambda: RobustPcaConfig(num_factors=2))
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    shrinkage_intensity: Union[float, str] = "auto"
    label: str = ""

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise InvalidSpec(f"unknown strategy kind {self.kind!r}; expected one of {STRATEGY_KINDS}")
        if not self.label:
            object.__setattr__(self, "label", self.kind)

    @property
    def uses_factor_model(self) -> bool:
        return self.kind in ("r_mvp", "poet_mvp")

    def effective_pca(self) -> RobustPcaConfig:
        if self.kind == "poet_mvp":
            return dataclasses.replace(self.pca, quantile_q=1.0)
        return self.pca


@dataclass(frozen=True, eq=False)
class StrategyFit:
    weights: PortfolioWeights
    sigma_hat: Optional[np.ndarray]
    estimate: Optional[RobustEstimate] = None
    resolved: Optional[StrategySpec] = None


def fit_strategy(spec: StrategySpec, panel: ReturnPanel, true_sigma=None) -> StrategyFit:
    """Estimate a covariance (where the rule needs one) and its weights.

    ``resolved`` repeats ``spec`` with the factor number and ``c_tau``
    pinned to the values actually used, so later fits can reuse them.
    """
    kind = spec.kind
    if kind == "equal_weight":
        return StrategyFit(equal_weight(panel.p), None, resolved=spec)
    if kind == "oracle_mvp":
        if true_sigma is None:
            raise InvalidSpec("oracle_mvp needs the true covariance")
        sigma = np.asarray(true_sigma, dtype=np.float64)
        return StrategyFit(mvp_weights(sigma, spec.label), sigma, resolved=spec)
    if kind == "sample_mvp":
        w = sample_cov_mvp(panel)
        return StrategyFit(PortfolioWeights(w.weights, spec.label), sample_covariance(panel), resolved=spec)
    if kind == "linear_shrinkage_mvp":
        sigma = linear_shrinkage_cov(panel, spec.shrinkage_intensity)
        return StrategyFit(mvp_weights(sigma, spec.label), sigma, resolved=spec)

    est = robust_covariance(panel, spec.effective_pca(), spec.threshold)
    resolved = dataclasses.replace(
        spec,
        pca=dataclasses.replace(spec.pca, num_factors=est.fit.num_factors),
        threshold=dataclasses.replace(spec.threshold, c_tau=est.residual_cov.c_tau),
    )
    return StrategyFit(mvp_weights(est.model, spec.label), np.array(est.model.sigma_r), est, resolved)
