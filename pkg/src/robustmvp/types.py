"""Core data model shared by every module.

All matrices are dense, row-major (C order) float64 arrays.  Instances are
immutable: arrays are copied on construction and flagged read-only, and
constructors reject any violated invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy import linalg

from .errors import (
    DimensionMismatch,
    InvalidSpec,
    NonFinite,
    NotPositiveDefinite,
    UnorderedIndex,
)

IDENTIFICATION_TOL = 1e-8
SYMMETRY_TOL = 1e-12
BUDGET_TOL = 1e-10


def _frozen(a, ndim: int | None = None, name: str = "array") -> np.ndarray:
    arr = np.array(a, dtype=np.float64, order="C", copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


def first_nonfinite(values: np.ndarray) -> tuple[int, int] | None:
    bad = np.argwhere(~np.isfinite(values))
    if bad.size == 0:
        return None
    idx = bad[0]
    if values.ndim == 1:
        return int(idx[0]), 0
    return int(idx[0]), int(idx[1])


@dataclass(frozen=True, eq=False)
class ReturnPanel:
    """T x p matrix of per-period excess returns (decimal units).

    Rows are periods, columns are assets.
    """

    values: np.ndarray
    asset_ids: tuple[str, ...]
    time_index: tuple[Any, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if values.ndim != 2:
            raise DimensionMismatch(f"panel values must be 2-D, got shape {values.shape}")
        T, p = values.shape
        ids = tuple(str(a) for a in self.asset_ids)
        index = tuple(self.time_index)
        if len(ids) != p:
            raise DimensionMismatch(f"{len(ids)} asset ids for {p} columns")
        if len(index) != T:
            raise DimensionMismatch(f"{len(index)} time labels for {T} rows")
        if T < 2 or p < 2:
            raise DimensionMismatch(f"panel needs T >= 2 and p >= 2, got T={T}, p={p}")
        loc = first_nonfinite(values)
        if loc is not None:
            raise NonFinite(*loc)
        if len(set(ids)) != p:
            raise DimensionMismatch("asset ids must be unique")
        for k in range(1, T):
            if not index[k - 1] < index[k]:
                raise UnorderedIndex(
                    f"time index not strictly increasing at row {k}: {index[k - 1]!r} -> {index[k]!r}"
                )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "asset_ids", ids)
        object.__setattr__(self, "time_index", index)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def rows(self, start: int, stop: int) -> "ReturnPanel":
        return ReturnPanel(self.values[start:stop], self.asset_ids, self.time_index[start:stop])

    def select_assets(self, keep: Sequence[int]) -> "ReturnPanel":
        keep = list(keep)
        return ReturnPanel(
            self.values[:, keep], tuple(self.asset_ids[k] for k in keep), self.time_index
        )

    @classmethod
    def from_array(cls, values, asset_ids=None, time_index=None) -> "ReturnPanel":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionMismatch(f"panel values must be 2-D, got shape {values.shape}")
        T, p = values.shape
        if asset_ids is None:
            asset_ids = [f"a{j}" for j in range(p)]
        if time_index is None:
            time_index = list(range(T))
        return cls(values, tuple(asset_ids), tuple(time_index))


def validate_panel(raw, ids, index) -> ReturnPanel:
    """Build a :class:`ReturnPanel`, checking every invariant.

    Raises
    ------
    NonFinite
        A NaN/Inf entry; the error carries its (row, col).
    DimensionMismatch
        ids or index lengths disagree with the matrix.
    UnorderedIndex
        time labels are not strictly increasing.
    """
    return ReturnPanel(raw, tuple(ids), tuple(index))


@dataclass(frozen=True, eq=False)
class FactorFit:
    """Output of the robust PCA iteration.

    ``loadings`` satisfy ``loadings.T @ loadings / p == I``; ``factors`` hold
    ``F_t = loadings.T @ r_t / p`` row by row.  ``factor_cov`` is the
    omega-weighted second moment ``(1/T) sum 2 w_t F_t F_t'`` that puts the
    common component on the return scale (equal to the classic factor
    second moment when every weight is one half).
    """

    loadings: np.ndarray
    factors: np.ndarray
    omega: np.ndarray
    tau: float
    num_factors: int
    iterations: int
    final_delta: float
    converged: bool = False
    objective_trace: tuple[float, ...] = ()
    factor_cov: np.ndarray | None = None
    degenerate: bool = False

    def __post_init__(self):
        B = _frozen(self.loadings, 2, "loadings")
        F = _frozen(self.factors, 2, "factors")
        omega = _frozen(self.omega, 1, "omega")
        p, m = B.shape
        T = F.shape[0]
        if m != self.num_factors or F.shape[1] != m:
            raise DimensionMismatch(
                f"num_factors={self.num_factors} but loadings {B.shape}, factors {F.shape}"
            )
        if omega.shape[0] != T:
            raise DimensionMismatch(f"omega has length {omega.shape[0]}, expected {T}")
        if m > min(T, p):
            raise InvalidSpec(f"m={m} exceeds min(T, p)={min(T, p)}")
        if np.any(omega <= 0) or np.any(omega > 0.5):
            raise InvalidSpec("every omega_t must lie in (0, 1/2]")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise InvalidSpec(f"tau must be positive, got {self.tau}")
        if m:
            gap = np.linalg.norm(B.T @ B / p - np.eye(m))
            if gap > IDENTIFICATION_TOL:
                raise InvalidSpec(f"identification condition violated: |B'B/p - I|_F = {gap:.3e}")
        if self.final_delta < 0:
            raise InvalidSpec("final_delta must be nonnegative")
        cov = None
        if self.factor_cov is not None:
            cov = _frozen(self.factor_cov, 2, "factor_cov")
            if cov.shape != (m, m):
                raise DimensionMismatch(f"factor_cov shape {cov.shape}, expected {(m, m)}")
        object.__setattr__(self, "loadings", B)
        object.__setattr__(self, "factors", F)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "factor_cov", cov)
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "final_delta", float(self.final_delta))
        object.__setattr__(self, "objective_trace", tuple(float(x) for x in self.objective_trace))

    @property
    def p(self) -> int:
        return self.loadings.shape[0]

    @property
    def T(self) -> int:
        return self.factors.shape[0]


@dataclass(frozen=True, eq=False)
class SparseResidualCov:
    """Thresholded residual covariance.

    ``sample`` and ``thresholds`` (the raw second-moment matrix and the
    entrywise tau_ij) are kept so the survival invariant can be checked.
    """

    matrix: np.ndarray
    c_tau: float
    rule: str
    sample: np.ndarray | None = None
    thresholds: np.ndarray | None = None
    sparsity: float = field(default=float("nan"))

    def __post_init__(self):
        M = _frozen(self.matrix, 2, "matrix")
        p = M.shape[0]
        if M.shape != (p, p):
            raise DimensionMismatch(f"residual covariance must be square, got {M.shape}")
        if self.rule not in ("soft", "hard"):
            raise InvalidSpec(f"unknown thresholding rule {self.rule!r}")
        if not (np.isfinite(self.c_tau) and self.c_tau >= 0):
            raise InvalidSpec(f"c_tau must be a nonnegative number, got {self.c_tau}")
        loc = first_nonfinite(M)
        if loc is not None:
            raise NonFinite(*loc)
        if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL:
            raise InvalidSpec("residual covariance is not symmetric")
        if np.any(np.diag(M) <= 0):
            raise NotPositiveDefinite("residual covariance diagonal must be strictly positive")
        S = tau = None
        if self.sample is not None and self.thresholds is not None:
            S = _frozen(self.sample, 2, "sample")
            tau = _frozen(self.thresholds, 2, "thresholds")
            off = ~np.eye(p, dtype=bool)
            alive = off & (M != 0)
            if np.any(np.abs(S[alive]) <= tau[alive]):
                raise InvalidSpec("a surviving off-diagonal entry does not exceed its threshold")
        off_count = p * (p - 1)
        zeros = int(np.sum(M[~np.eye(p, dtype=bool)] == 0))
        sparsity = zeros / off_count if off_count else 0.0
        object.__setattr__(self, "matrix", M)
        object.__setattr__(self, "sample", S)
        object.__setattr__(self, "thresholds", tau)
        object.__setattr__(self, "c_tau", float(self.c_tau))
        object.__setattr__(self, "sparsity", float(sparsity))

    @property
    def p(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class ReturnCovModel:
    """Low-rank plus sparse return covariance ``L L' + Sigma_e``.

    ``loadings`` are on the covariance scale (see :class:`FactorFit`).  The
    inverse is never formed densely: :meth:`solve` applies the Woodbury
    identity through Cholesky factors of ``Sigma_e`` and of the m x m core
    ``I + L' Sigma_e^{-1} L``.
    """

    loadings: np.ndarray
    residual_cov: SparseResidualCov

    def __post_init__(self):
        L = _frozen(self.loadings, 2, "loadings")
        p = self.residual_cov.p
        if L.shape[0] != p:
            raise DimensionMismatch(f"loadings have {L.shape[0]} rows, residual covariance is {p}x{p}")
        try:
            chol_e = linalg.cho_factor(self.residual_cov.matrix, lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise NotPositiveDefinite("residual covariance failed Cholesky") from exc
        einv_L = linalg.cho_solve(chol_e, L, check_finite=False)
        core = np.eye(L.shape[1]) + L.T @ einv_L
        core = 0.5 * (core + core.T)
        chol_core = linalg.cho_factor(core, lower=True, check_finite=False)
        object.__setattr__(self, "loadings", L)
        object.__setattr__(self, "_chol_e", chol_e)
        object.__setattr__(self, "_einv_L", einv_L)
        object.__setattr__(self, "_chol_core", chol_core)

    @property
    def p(self) -> int:
        return self.loadings.shape[0]

    @property
    def num_factors(self) -> int:
        return self.loadings.shape[1]

    @property
    def sigma_r(self) -> np.ndarray:
        S = self.loadings @ self.loadings.T + self.residual_cov.matrix
        S = 0.5 * (S + S.T)
        S.flags.writeable = False
        return S

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Return ``sigma_r^{-1} b`` for a vector or matrix ``b``."""
        b = np.asarray(b, dtype=np.float64)
        x0 = linalg.cho_solve(self._chol_e, b, check_finite=False)
        if self.num_factors == 0:
            return x0
        y = linalg.cho_solve(self._chol_core, self.loadings.T @ x0, check_finite=False)
        return x0 - self._einv_L @ y

    def inverse(self) -> np.ndarray:
        """Dense ``sigma_r^{-1}`` assembled from the Woodbury identity."""
        einv = linalg.cho_solve(self._chol_e, np.eye(self.p), check_finite=False)
        if self.num_factors:
            einv = einv - self._einv_L @ linalg.cho_solve(
                self._chol_core, self._einv_L.T, check_finite=False
            )
        return 0.5 * (einv + einv.T)


@dataclass(frozen=True, eq=False)
class PortfolioWeights:
    weights: np.ndarray
    strategy_tag: str = ""

    def __post_init__(self):
        w = _frozen(self.weights, 1, "weights")
        loc = first_nonfinite(w)
        if loc is not None:
            raise NonFinite(*loc)
        if abs(w.sum() - 1.0) > BUDGET_TOL:
            raise InvalidSpec(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.shape[0]
