"""Robust minimum variance portfolios under shocks.

Huber-weighted PCA factor estimation, entry-adaptive thresholding of the
residual covariance, minimum variance weights through a Woodbury inverse,
a seeded Monte-Carlo lab and a rolling-window backtester.
"""

from .errors import (
    BacktestNodeError,
    ConfigError,
    DataError,
    NumericalError,
    RobustMVPError,
)
from .factors import RobustPcaConfig, fit_robust_factors, huber_weight, weighted_scatter
from .portfolio import (
    StrategySpec,
    assemble_sigma_r,
    estimate_mu,
    fit_strategy,
    min_risk,
    mvp_weights,
    robust_covariance,
    sharpe_estimate,
)
from .threshold import ThresholdConfig, adaptive_threshold, cross_validate_c_tau
from .types import FactorFit, PortfolioWeights, ReturnCovModel, ReturnPanel, SparseResidualCov

__version__ = "0.1.0"
