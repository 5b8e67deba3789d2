"""Huber-weighted principal components for approximate factor models.

Loadings are normalised so that ``B'B / p = I_m`` and factors are recovered
as ``F_t = B' r_t / p``.  Each iteration reweights the periods with the
Huber weight of their residual norm, rebuilds the weighted scatter
``(1/T) sum_t w_t r_t r_t'`` and takes its leading eigenvectors.  Weights of
exactly one half everywhere give back classic PCA.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .errors import DimensionMismatch, EigFailure, InvalidSpec, InvalidTau, LengthMismatch
from .types import FactorFit, ReturnPanel

logger = logging.getLogger(__name__)

SIGN_RULE = "max_abs_positive"
FACTOR_SCALES = ("weighted", "identity")


class DegenerateSpectrumWarning(UserWarning):
    """The m-th and (m+1)-th eigenvalues are numerically tied."""


@dataclass(frozen=True)
class RobustPcaConfig:
    """Settings for :func:`fit_robust_factors`.

    ``tol`` is absolute, in the squared units of the panel (the change in
    ``sum_t ||r_t - B F_t||^2`` between iterations).  ``factor_scale``
    chooses how the common component is put on the covariance scale:
    ``"weighted"`` uses the omega-weighted factor second moment,
    ``"identity"`` takes the factor covariance to be ``I_m``.
    """

    num_factors: Union[int, str] = "auto"
    quantile_q: float = 0.9
    max_iter: int = 100
    tol: float = 1e-10
    max_factors_M: int = 5
    eig_sign_rule: str = SIGN_RULE
    reselect_factors: bool = False
    factor_scale: str = "weighted"

    def __post_init__(self):
        if isinstance(self.num_factors, str):
            if self.num_factors != "auto":
                raise InvalidSpec(f"num_factors must be an integer or 'auto', got {self.num_factors!r}")
        elif isinstance(self.num_factors, bool) or int(self.num_factors) != self.num_factors or self.num_factors < 0:
            raise InvalidSpec(f"num_factors must be a nonnegative integer, got {self.num_factors!r}")
        if not 0 < self.quantile_q <= 1:
            raise InvalidSpec(f"quantile_q must lie in (0, 1], got {self.quantile_q}")
        if self.max_iter < 1:
            raise InvalidSpec("max_iter must be at least 1")
        if self.tol < 0:
            raise InvalidSpec("tol must be nonnegative")
        if self.max_factors_M < 1:
            raise InvalidSpec("max_factors_M must be at least 1")
        if self.eig_sign_rule != SIGN_RULE:
            raise InvalidSpec(f"unknown eig_sign_rule {self.eig_sign_rule!r}")
        if self.factor_scale not in FACTOR_SCALES:
            raise InvalidSpec(f"factor_scale must be one of {FACTOR_SCALES}")


def huber_weight(residual_norm, tau: float):
    """Huber period weight: 1/2 up to ``tau``, ``(tau/2)/norm`` beyond it.

    Works elementwise on arrays.  Continuous at ``norm == tau``.
    """
    if not (np.isfinite(tau) and tau > 0):
        raise InvalidTau(f"tau must be positive and finite, got {tau}")
    n = np.asarray(residual_norm, dtype=np.float64)
    if np.any(n < 0) or not np.all(np.isfinite(n)):
        raise ValueError("residual norms must be finite and nonnegative")
    above = n > tau
    w = np.full(n.shape, 0.5)
    np.divide(0.5 * tau, n, out=w, where=above)
    return float(w) if w.ndim == 0 else w


def weighted_scatter(panel, omega) -> np.ndarray:
    """``(1/T) sum_t omega_t r_t r_t'``, symmetrised after accumulation."""
    R = _values(panel)
    omega = np.asarray(omega, dtype=np.float64)
    if omega.ndim != 1 or omega.shape[0] != R.shape[0]:
        raise LengthMismatch(f"omega has shape {omega.shape}, panel has {R.shape[0]} periods")
    V = (R * omega[:, None]).T @ R / R.shape[0]
    return 0.5 * (V + V.T)


class PcaStep(NamedTuple):
    loadings: np.ndarray
    eigenvalues: np.ndarray
    degenerate: bool


def apply_sign_rule(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive.

    Ties go to the lowest row index.
    """
    if vectors.shape[1] == 0:
        return vectors
    rows = np.argmax(np.abs(vectors), axis=0)
    signs = np.where(vectors[rows, np.arange(vectors.shape[1])] < 0, -1.0, 1.0)
    return vectors * signs


def _eigh_desc(S: np.ndarray):
    try:
        vals, vecs = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise EigFailure(f"symmetric eigensolver did not converge: {exc}") from exc
    return vals[::-1], vecs[:, ::-1]


def pca_step(scatter, m: int) -> PcaStep:
    """Loadings from the ``m`` leading eigenvectors of a p x p scatter.

    Columns are ``sqrt(p)`` times unit eigenvectors in descending
    eigenvalue order, signs fixed by :func:`apply_sign_rule`.  ``degenerate``
    is set when ``lambda_m - lambda_{m+1} < 1e-10 * lambda_1``.
    """
    S = np.asarray(scatter, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"scatter must be square, got {S.shape}")
    p = S.shape[0]
    if not 0 <= m <= p:
        raise InvalidSpec(f"m={m} must lie in [0, {p}]")
    vals, vecs = _eigh_desc(0.5 * (S + S.T))
    loadings = np.sqrt(p) * apply_sign_rule(vecs[:, :m])
    degenerate = False
    if 0 < m < p and vals[m - 1] - vals[m] < 1e-10 * abs(vals[0]):
        degenerate = True
        warnings.warn(
            f"eigenvalues {m} and {m + 1} are tied; leading subspace is not unique",
            DegenerateSpectrumWarning,
            stacklevel=2,
        )
    return PcaStep(loadings, vals, degenerate)


def factor_scores(R: np.ndarray, loadings: np.ndarray) -> np.ndarray:
    return R @ loadings / loadings.shape[0]


def _values(panel) -> np.ndarray:
    if isinstance(panel, ReturnPanel):
        return panel.values
    R = np.asarray(panel, dtype=np.float64)
    if R.ndim != 2:
        raise DimensionMismatch(f"expected a T x p matrix, got shape {R.shape}")
    return R


def ic_penalty(T: int, p: int) -> float:
    return (p + T) / (p * T) * np.log(p * T / (p + T))


def information_criterion(panel, weights, M: int) -> np.ndarray:
    """Factor-number criterion evaluated at ``m1 = 0..M``.

    ``log(||R~ - B F'||_F^2 / (pT)) + m1 * g(T, p)`` where ``R~`` scales row
    t of the panel by ``sqrt(w_t)`` and ``B, F`` are its rank-``m1`` PCA fit.
    Residuals below ``1e-12 * ||R~||_F^2`` are treated as exact zeros so
    that round-off cannot reward extra factors.
    """
    R = _values(panel)
    T, p = R.shape
    if not 0 <= M <= min(T, p):
        raise InvalidSpec(f"M={M} must lie in [0, min(T, p)={min(T, p)}]")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (T,):
        raise LengthMismatch(f"weights have shape {w.shape}, expected ({T},)")
    Rt = np.sqrt(w)[:, None] * R
    total = float(np.sum(Rt * Rt))
    floor = max(1e-12 * total, np.finfo(float).tiny)
    _, vecs = _eigh_desc(Rt.T @ Rt) if M else (None, None)
    g = ic_penalty(T, p)
    curve = np.empty(M + 1)
    for m1 in range(M + 1):
        if m1 == 0:
            resid = total
        else:
            B = np.sqrt(p) * apply_sign_rule(vecs[:, :m1])
            F = factor_scores(Rt, B)
            E = Rt - F @ B.T
            resid = float(np.sum(E * E))
        curve[m1] = np.log(max(resid, floor) / (p * T)) + m1 * g
    return curve


def select_num_factors(panel, weights, M: int) -> int:
    """Minimiser of :func:`information_criterion`; ties go to fewer factors."""
    return int(np.argmin(information_criterion(panel, weights, M)))


def residual_norms(R: np.ndarray, loadings: np.ndarray) -> np.ndarray:
    E = R - factor_scores(R, loadings) @ loadings.T
    return np.sqrt(np.sum(E * E, axis=1))


def _weights_from(R, loadings, q):
    norms = residual_norms(R, loadings)
    # Guard a zero quantile (exactly fitted panels) and weight underflow.
    tau = max(float(np.quantile(norms, q)), np.finfo(float).tiny)
    omega = np.maximum(huber_weight(norms, tau), np.finfo(float).tiny)
    return omega, tau


def initial_weights(panel, cfg: RobustPcaConfig, M: int) -> np.ndarray:
    """Weights from one classic-PCA pass, used to pick the factor number.

    The provisional factor number comes from the unweighted criterion.
    """
    R = _values(panel)
    half = np.full(R.shape[0], 0.5)
    m0 = select_num_factors(R, half, M)
    if m0 == 0:
        return half
    B0 = pca_step(R.T @ R, m0).loadings
    omega, _ = _weights_from(R, B0, cfg.quantile_q)
    return omega


def fit_robust_factors(panel: ReturnPanel, cfg: RobustPcaConfig | None = None) -> FactorFit:
    """Iterate Huber weights and weighted PCA until the objective settles.

    Starts from classic PCA of ``sum_t r_t r_t'``.  Each pass sets ``tau`` to
    the ``cfg.quantile_q`` quantile (linear interpolation) of the current
    residual norms, recomputes the weights and the weighted scatter, and
    refreshes loadings and factors.  Stops once the absolute change of
    ``sum_t ||r_t - B F_t||^2`` drops below ``cfg.tol`` or after
    ``cfg.max_iter`` passes; hitting the cap is not an error.
    """
    cfg = cfg or RobustPcaConfig()
    R = _values(panel)
    T, p = R.shape
    M = min(cfg.max_factors_M, T, p)
    if cfg.num_factors == "auto":
        m = select_num_factors(R, initial_weights(R, cfg, M), M)
        logger.debug("selected %d factors", m)
    else:
        m = int(cfg.num_factors)
        if m > min(T, p):
            raise InvalidSpec(f"num_factors={m} exceeds min(T, p)={min(T, p)}")

    B = pca_step(R.T @ R, m).loadings
    E = R - factor_scores(R, B) @ B.T
    objective = float(np.sum(E * E))
    trace = [objective]
    converged = False
    degenerate = False
    delta = float("inf")
    omega = np.full(T, 0.5)
    tau = np.finfo(float).tiny
    iterations = 0
    for iterations in range(1, cfg.max_iter + 1):
        omega, tau = _weights_from(R, B, cfg.quantile_q)
        V = weighted_scatter(R, omega)
        if cfg.reselect_factors:
            m = select_num_factors(R, omega, M)
        step = pca_step(V, m)
        B = step.loadings
        degenerate = step.degenerate
        E = R - factor_scores(R, B) @ B.T
        new_objective = float(np.sum(E * E))
        delta = abs(objective - new_objective)
        objective = new_objective
        trace.append(objective)
        if delta < cfg.tol:
            converged = True
            break
    if not converged:
        logger.info("robust PCA stopped at max_iter=%d with delta=%.3e", cfg.max_iter, delta)

    F = factor_scores(R, B)
    factor_cov = (F * (2.0 * omega)[:, None]).T @ F / T
    factor_cov = 0.5 * (factor_cov + factor_cov.T)
    return FactorFit(
        loadings=B,
        factors=F,
        omega=omega,
        tau=tau,
        num_factors=m,
        iterations=iterations,
        final_delta=delta,
        converged=converged,
        objective_trace=tuple(trace),
        factor_cov=factor_cov,
        degenerate=degenerate,
    )


def residuals(panel, fit: FactorFit) -> np.ndarray:
    """Row t is ``r_t' - F_t' B'``."""
    R = _values(panel)
    if R.shape != (fit.T, fit.p):
        raise DimensionMismatch(f"panel shape {R.shape} does not match fit ({fit.T}, {fit.p})")
    return R - fit.factors @ fit.loadings.T


def covariance_loadings(fit: FactorFit, factor_scale: str = "weighted") -> np.ndarray:
    """Loadings ``L`` with ``L L'`` the fitted common-component covariance."""
    if factor_scale == "identity" or fit.num_factors == 0:
        return np.array(fit.loadings)
    if factor_scale != "weighted":
        raise InvalidSpec(f"factor_scale must be one of {FACTOR_SCALES}")
    vals, vecs = np.linalg.eigh(fit.factor_cov)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return fit.loadings @ root
