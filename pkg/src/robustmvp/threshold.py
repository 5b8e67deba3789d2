"""Entry-adaptive thresholding of the residual covariance.

Off-diagonal entries of the residual second-moment matrix are shrunk with
an entry-specific threshold ``tau_ij = c_tau * s_T * sqrt(theta_ij)`` where
``s_T = 1/sqrt(p) + sqrt(log(p)/T)`` (natural log) and ``theta_ij`` is the
sample variance of the products ``e_it e_jt``.  The diagonal is kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import DimensionMismatch, InvalidCTau, InvalidSpec, NoFeasibleCTau
from .rng import STREAM_CV, make_rng
from .types import SparseResidualCov

RULES = ("soft", "hard")
PD_FLOOR = 1e-10
DEFAULT_GRID = tuple(round(0.1 * k, 1) for k in range(1, 21))


@dataclass(frozen=True)
class ThresholdConfig:
    c_tau: Union[float, str] = 0.5
    rule: str = "soft"
    varsigma_mode: str = "simple"
    cv_folds: int = 5
    cv_grid: tuple[float, ...] = field(default=DEFAULT_GRID)
    cv_seed: int = 0

    def __post_init__(self):
        if isinstance(self.c_tau, str):
            if self.c_tau != "cv":
                raise InvalidCTau(f"c_tau must be a number or 'cv', got {self.c_tau!r}")
        elif not (np.isfinite(self.c_tau) and self.c_tau >= 0):
            raise InvalidCTau(f"c_tau must be nonnegative, got {self.c_tau}")
        if self.rule not in RULES:
            raise InvalidSpec(f"rule must be one of {RULES}, got {self.rule!r}")
        if self.varsigma_mode != "simple":
            raise InvalidSpec(f"unknown varsigma_mode {self.varsigma_mode!r}")
        if self.cv_folds < 2:
            raise InvalidSpec("cv_folds must be at least 2")
        grid = tuple(float(c) for c in self.cv_grid)
        if not grid or any(c <= 0 for c in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise InvalidSpec("cv_grid must be nonempty, positive and strictly ascending")
        object.__setattr__(self, "cv_grid", grid)


def _residual_matrix(E) -> np.ndarray:
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2:
        raise DimensionMismatch(f"residuals must be a T x p matrix, got shape {E.shape}")
    if E.shape[0] < 2:
        raise DimensionMismatch("need at least two periods of residuals")
    return E


def sample_residual_cov(E) -> np.ndarray:
    """``(1/T) E'E`` without mean subtraction."""
    E = _residual_matrix(E)
    S = E.T @ E / E.shape[0]
    return 0.5 * (S + S.T)


def theta_hat(E, S) -> np.ndarray:
    """``theta_ij = (1/T) sum_t (E_ti E_tj - S_ij)^2``."""
    E = _residual_matrix(E)
    S = np.asarray(S, dtype=np.float64)
    T, p = E.shape
    if S.shape != (p, p):
        raise DimensionMismatch(f"S has shape {S.shape}, expected {(p, p)}")
    theta = np.empty((p, p))
    for i in range(p):
        dev = E[:, i : i + 1] * E - S[i]
        theta[i] = np.einsum("tj,tj->j", dev, dev) / T
    return 0.5 * (theta + theta.T)


def varsigma(p: int, T: int) -> float:
    return 1.0 / np.sqrt(p) + np.sqrt(np.log(p) / T)


def shrink(z, tau, rule: str = "soft") -> np.ndarray:
    """Apply a thresholding rule elementwise.

    Both rules return 0 whenever ``|z| <= tau`` and never move an entry by
    more than ``tau``; the soft rule is nudged by one ulp toward ``z`` where
    rounding in ``|z| - tau`` would otherwise overshoot.
    """
    z = np.asarray(z, dtype=np.float64)
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), z.shape)
    keep = np.abs(z) > tau
    if rule == "hard":
        return np.where(keep, z, 0.0)
    if rule != "soft":
        raise InvalidSpec(f"rule must be one of {RULES}, got {rule!r}")
    out = np.where(keep, np.sign(z) * (np.abs(z) - tau), 0.0)
    over = keep & (np.abs(out - z) > tau)
    while np.any(over):
        out[over] = np.nextafter(out[over], z[over])
        over = keep & (np.abs(out - z) > tau)
    return out


def adaptive_threshold(S, theta, c_tau: float, p: int, T: int, rule: str = "soft") -> SparseResidualCov:
    """Shrink off-diagonals of ``S`` at ``c_tau * s_T * sqrt(theta_ij)``."""
    if isinstance(c_tau, str) or not (np.isfinite(c_tau) and c_tau >= 0):
        raise InvalidCTau(f"c_tau must be a nonnegative number, got {c_tau!r}")
    S = np.asarray(S, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if S.shape != (p, p) or theta.shape != (p, p):
        raise DimensionMismatch(f"S {S.shape} and theta {theta.shape} must both be {(p, p)}")
    tau = c_tau * varsigma(p, T) * np.sqrt(np.clip(theta, 0.0, None))
    out = shrink(S, tau, rule)
    out = np.triu(out, 1)
    out = out + out.T
    np.fill_diagonal(out, np.diag(S))
    return SparseResidualCov(out, float(c_tau), rule, sample=S, thresholds=tau)


def threshold_residuals(E, c_tau: float, rule: str = "soft") -> SparseResidualCov:
    E = _residual_matrix(E)
    S = sample_residual_cov(E)
    return adaptive_threshold(S, theta_hat(E, S), c_tau, E.shape[1], E.shape[0], rule)


@dataclass(frozen=True)
class CvDiagnostics:
    grid: tuple[float, ...]
    loss: np.ndarray
    min_eig: np.ndarray
    feasible: np.ndarray
    c_lower: float | None
    c_star: float | None

    def rows(self):
        for k, c in enumerate(self.grid):
            yield c, float(self.loss[k]), float(self.min_eig[k]), bool(self.feasible[k])


def cv_splits(T: int, folds: int, seed: int):
    """Random two-subset splits, train size ``floor(2T/3)``.

    Each fold redraws the role assignment independently.
    """
    n_train = (2 * T) // 3
    if n_train < 2 or T - n_train < 1:
        raise DimensionMismatch(f"T={T} too short for a {n_train}/{T - n_train} split")
    rng = make_rng(int(seed), STREAM_CV)
    for _ in range(folds):
        perm = rng.permutation(T)
        yield np.sort(perm[:n_train]), np.sort(perm[n_train:])


def cross_validate_c_tau(E, cfg: ThresholdConfig | None = None, p: int | None = None, T: int | None = None):
    """Choose ``c_tau`` on ``cfg.cv_grid`` by repeated random splits.

    For each split the thresholded second moment of the training part is
    compared with the raw second moment of the validation part in squared
    Frobenius norm.  Grid values below the smallest one that keeps every
    training estimate positive definite (``lambda_min > 1e-10``) are
    excluded, as is any infeasible value above it; ties go to the smaller
    value.

    Returns
    -------
    c_star : float
    diagnostics : CvDiagnostics
        Full loss curve, minimum eigenvalues and feasibility per grid value.
    """
    cfg = cfg or ThresholdConfig(c_tau="cv")
    E = _residual_matrix(E)
    T_, p_ = E.shape
    if (p is not None and p != p_) or (T is not None and T != T_):
        raise DimensionMismatch(f"residuals are {T_} x {p_}, caller passed T={T}, p={p}")
    grid = cfg.cv_grid
    loss = np.zeros(len(grid))
    min_eig = np.full(len(grid), np.inf)
    for train, valid in cv_splits(T_, cfg.cv_folds, cfg.cv_seed):
        EA = E[train]
        SA = sample_residual_cov(EA)
        thA = theta_hat(EA, SA)
        SB = sample_residual_cov(E[valid])
        for k, c in enumerate(grid):
            tau = c * varsigma(p_, EA.shape[0]) * np.sqrt(thA)
            est = shrink(SA, tau, cfg.rule)
            est = np.triu(est, 1)
            est = est + est.T
            np.fill_diagonal(est, np.diag(SA))
            min_eig[k] = min(min_eig[k], np.linalg.eigvalsh(est)[0])
            diff = est - SB
            loss[k] += float(np.sum(diff * diff))
    loss /= cfg.cv_folds
    feasible = min_eig > PD_FLOOR
    if not feasible.any():
        diag = CvDiagnostics(grid, loss, min_eig, feasible, None, None)
        raise NoFeasibleCTau("no grid value gives a positive definite estimate on every fold", curve=diag)
    lower = int(np.argmax(feasible))
    candidates = [k for k in range(lower, len(grid)) if feasible[k]]
    best = min(candidates, key=lambda k: (loss[k], k))
    diag = CvDiagnostics(grid, loss, min_eig, feasible, grid[lower], grid[best])
    return grid[best], diag


def estimate_residual_cov(E, cfg: ThresholdConfig | None = None):
    """Threshold residuals at a fixed ``c_tau`` or one chosen by CV.

    Returns the estimate and the CV diagnostics (``None`` when not run).
    """
    cfg = cfg or ThresholdConfig()
    diag = None
    c_tau = cfg.c_tau
    if c_tau == "cv":
        c_tau, diag = cross_validate_c_tau(E, cfg)
    return threshold_residuals(E, float(c_tau), cfg.rule), diag
