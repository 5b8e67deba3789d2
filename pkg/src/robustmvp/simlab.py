"""Synthetic data generating processes and replicated experiments.

Two AR(1) factors drive ``p`` assets through normally drawn loadings;
idiosyncratic errors are Gaussian with a banded (or block) covariance.
Shock variants add individual-specific jumps to the errors
(heterogeneous) or common jumps to the factor innovations (homogeneous),
always inside the training window, so the population covariance is
unchanged.

Streams
-------
The population (``B``, ``Sigma_e``) is drawn once per ``seed`` from stream
``(seed, 0)``.  Replication ``k`` draws factor innovations, errors and
heterogeneous shock vectors from ``(seed, 1, k, 0)``, ``(seed, 1, k, 1)``
and ``(seed, 1, k, 2)``.  Hence DGPs that share a seed share the population
and the unshocked part of every sample path.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import InvalidSpec, RobustMVPError
from .metrics import (
    cov_error,
    max_drawdown,
    neg_weight_error,
    oos_risk,
    portfolio_returns,
    sharpe,
    weight_error,
)
from .portfolio import StrategySpec, fit_strategy, mvp_weights
from .rng import (
    STREAM_SAMPLE,
    STREAM_TRUTH,
    SUB_ERRORS,
    SUB_FACTORS,
    SUB_HETERO_SHOCKS,
    make_rng,
)
from .types import ReturnPanel

logger = logging.getLogger(__name__)

HETERO_DGPS = (2, 4, 5, 6)
HOMO_DGPS = (3, 4)
METRICS = ("oos_risk", "mdd", "sr_error", "weight_error", "cov_error", "neg_weight_error")
METRIC_TITLES = {
    "oos_risk": "Risk",
    "mdd": "MDD",
    "sr_error": "SR error",
    "weight_error": "Weight error",
    "cov_error": "Cov error",
    "neg_weight_error": "Neg weight error",
}


@dataclass(frozen=True)
class SyntheticSigmaE:
    """Recipe for the idiosyncratic covariance.

    ``banded``: correlation ``off_diag_decay**k`` on the k-th band up to
    ``bandwidth``.  ``block_diag``: equicorrelation ``off_diag_decay`` inside
    consecutive blocks of ``bandwidth + 1`` assets.  Variances are drawn
    uniform on ``[0.5, 1.5] * base_variance``.
    """

    kind: str = "banded"
    base_variance: float = 0.00044
    off_diag_decay: float = 0.3
    bandwidth: int = 3

    def __post_init__(self):
        if self.kind not in ("banded", "block_diag"):
            raise InvalidSpec(f"residual_cov_spec.kind must be 'banded' or 'block_diag', got {self.kind!r}")
        if not self.base_variance > 0:
            raise InvalidSpec("residual_cov_spec.base_variance must be positive")
        if not -1 < self.off_diag_decay < 1:
            raise InvalidSpec("residual_cov_spec.off_diag_decay must lie in (-1, 1)")
        if self.bandwidth < 0:
            raise InvalidSpec("residual_cov_spec.bandwidth must be nonnegative")

    def correlation(self, p: int) -> np.ndarray:
        C = np.eye(p)
        if self.kind == "banded":
            for k in range(1, min(self.bandwidth, p - 1) + 1):
                band = np.full(p - k, self.off_diag_decay**k)
                C += np.diag(band, k) + np.diag(band, -k)
        else:
            size = self.bandwidth + 1
            for start in range(0, p, size):
                stop = min(start + size, p)
                C[start:stop, start:stop] = self.off_diag_decay
            np.fill_diagonal(C, 1.0)
        return C

    def build(self, p: int, rng: np.random.Generator) -> np.ndarray:
        """Draw variances and return an SPD ``p x p`` matrix."""
        sd = np.sqrt(rng.uniform(0.5, 1.5, p) * self.base_variance)
        S = self.correlation(p) * np.outer(sd, sd)
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise InvalidSpec(f"residual_cov_spec does not give a positive definite matrix for p={p}") from exc
        return S


@dataclass(frozen=True)
class DgpSpec:
    """One of the six simulation designs.

    ``shock_multiplier`` and ``shock_cov_scale`` default by design: 5 and 1,
    except 3 for DGP 5 and a doubled shock covariance for DGP 6.
    """

    dgp_id: int = 1
    p: int = 50
    T: int = 100
    mu_b: tuple[float, float] = (0.018, -0.001)
    sigma_b: tuple[float, float] = (0.0072, 0.0084)
    ar_coeffs: tuple[float, float] = (0.6, 0.95)
    ar_intercept: float = 0.01
    shock_multiplier: Optional[float] = None
    shock_cov_scale: Optional[float] = None
    freq_hetero: int = 50
    freq_homo: int = 40
    residual_cov_spec: SyntheticSigmaE = field(default_factory=SyntheticSigmaE)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.dgp_id, bool) or self.dgp_id not in (1, 2, 3, 4, 5, 6):
            raise InvalidSpec(f"dgp_id must be one of 1..6, got {self.dgp_id!r}")
        if self.p < 2 or self.T < 2:
            raise InvalidSpec(f"need p >= 2 and T >= 2, got p={self.p}, T={self.T}")
        for name in ("mu_b", "sigma_b", "ar_coeffs"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 2:
                raise InvalidSpec(f"{name} must have two entries")
            object.__setattr__(self, name, value)
        if any(s < 0 for s in self.sigma_b):
            raise InvalidSpec("sigma_b must be nonnegative")
        if any(not -1 < a < 1 for a in self.ar_coeffs):
            raise InvalidSpec("ar_coeffs must lie in (-1, 1)")
        if self.freq_hetero < 1 or self.freq_homo < 1:
            raise InvalidSpec("shock frequencies must be positive")
        if self.seed < 0:
            raise InvalidSpec("seed must be nonnegative")
        if isinstance(self.residual_cov_spec, dict):
            object.__setattr__(self, "residual_cov_spec", SyntheticSigmaE(**self.residual_cov_spec))
        if self.shock_multiplier is None:
            object.__setattr__(self, "shock_multiplier", 3.0 if self.dgp_id == 5 else 5.0)
        if self.shock_cov_scale is None:
            object.__setattr__(self, "shock_cov_scale", 2.0 if self.dgp_id == 6 else 1.0)
        if self.shock_cov_scale < 0:
            raise InvalidSpec("shock_cov_scale must be nonnegative")

    @property
    def hetero_dates(self) -> np.ndarray:
        """1-based training dates carrying an error shock."""
        if self.dgp_id not in HETERO_DGPS:
            return np.zeros(0, dtype=int)
        return np.arange(self.freq_hetero, self.T + 1, self.freq_hetero)

    @property
    def homo_dates(self) -> np.ndarray:
        """1-based training dates carrying a factor shock."""
        if self.dgp_id not in HOMO_DGPS:
            return np.zeros(0, dtype=int)
        return np.arange(self.freq_homo, self.T + 1, self.freq_homo)


@dataclass(frozen=True, eq=False)
class DgpTruth:
    loadings: np.ndarray
    sigma_e: np.ndarray
    sigma_r: np.ndarray
    mu: np.ndarray
    w_star: np.ndarray


def population(spec: DgpSpec) -> DgpTruth:
    """Population quantities; independent of the replication and of shocks."""
    rng = make_rng(spec.seed, STREAM_TRUTH)
    sigma_e = spec.residual_cov_spec.build(spec.p, rng)
    z = rng.standard_normal((spec.p, 2))
    B = np.asarray(spec.mu_b) + z * np.asarray(spec.sigma_b)
    sigma_r = B @ B.T + sigma_e
    sigma_r = 0.5 * (sigma_r + sigma_r.T)
    mu = B @ (spec.ar_intercept / (1.0 - np.asarray(spec.ar_coeffs)))
    w_star = mvp_weights(sigma_r).weights
    return DgpTruth(B, sigma_e, sigma_r, mu, w_star)


def factor_paths(spec: DgpSpec, replication: int = 0, n_periods: Optional[int] = None) -> np.ndarray:
    """AR(1) factor paths ``f_1..f_n`` (``n = 2T`` by default), ``f_0 = 0``."""
    n = 2 * spec.T if n_periods is None else n_periods
    alpha = np.asarray(spec.ar_coeffs)
    scale = np.sqrt(1.0 - alpha**2)
    u = make_rng(spec.seed, STREAM_SAMPLE, replication, SUB_FACTORS).standard_normal((n, 2)) * scale
    homo = spec.homo_dates
    u[homo[homo <= n] - 1] += spec.shock_multiplier * scale
    F = np.empty((n, 2))
    f = np.zeros(2)
    for t in range(n):
        f = spec.ar_intercept + alpha * f + u[t]
        F[t] = f
    return F


def gen_dgp(spec: DgpSpec, replication: int = 0, truth: Optional[DgpTruth] = None):
    """Simulate ``2T`` periods.

    Returns
    -------
    train, test : ReturnPanel
        Periods ``1..T`` and ``T+1..2T``.
    truth : DgpTruth
    """
    truth = truth or population(spec)
    T, p = spec.T, spec.p
    F = factor_paths(spec, replication)
    L = np.linalg.cholesky(truth.sigma_e)
    E = make_rng(spec.seed, STREAM_SAMPLE, replication, SUB_ERRORS).standard_normal((2 * T, p)) @ L.T
    hetero = spec.hetero_dates
    if hetero.size:
        mu_s = spec.shock_multiplier * np.sqrt(np.diag(truth.sigma_e))
        z = make_rng(spec.seed, STREAM_SAMPLE, replication, SUB_HETERO_SHOCKS).standard_normal((hetero.size, p))
        E[hetero - 1] += mu_s + np.sqrt(spec.shock_cov_scale) * (z @ L.T)
    R = F @ truth.loadings.T + E
    ids = [f"a{i}" for i in range(p)]
    train = ReturnPanel(R[:T], ids, np.arange(1, T + 1))
    test = ReturnPanel(R[T:], ids, np.arange(T + 1, 2 * T + 1))
    return train, test, truth


def synthetic_panel(spec: DgpSpec, replication: int = 0) -> ReturnPanel:
    """All ``2T`` simulated periods as one panel."""
    train, test, _ = gen_dgp(spec, replication)
    return ReturnPanel(
        np.vstack([train.values, test.values]), train.asset_ids, train.time_index + test.time_index
    )


@dataclass(frozen=True)
class MetricRecord:
    oos_risk: float
    mdd: float
    sr_error: float
    weight_error: float
    cov_error: float
    neg_weight_error: float


def metric_suite(weights, test: ReturnPanel, truth: DgpTruth, sigma_hat=None) -> MetricRecord:
    """Evaluation measures for one fitted strategy.

    ``cov_error`` is NaN for rules that do not estimate a covariance.
    """
    r = portfolio_returns(weights, test)
    r_star = portfolio_returns(truth.w_star, test)
    return MetricRecord(
        oos_risk=oos_risk(r),
        mdd=max_drawdown(r),
        sr_error=abs(sharpe(r) - sharpe(r_star)),
        weight_error=weight_error(weights, truth.w_star),
        cov_error=float("nan") if sigma_hat is None else cov_error(sigma_hat, truth.sigma_r),
        neg_weight_error=neg_weight_error(weights),
    )


@dataclass
class ReplicationResult:
    replication: int
    records: dict
    failures: dict
    omegas: dict


def run_replication(spec: DgpSpec, replication: int, strategies: Sequence[StrategySpec], truth=None) -> ReplicationResult:
    with threadpool_limits(limits=1):
        train, test, truth = gen_dgp(spec, replication, truth)
        records, failures, omegas = {}, {}, {}
        for strat in strategies:
            try:
                fit = fit_strategy(strat, train, truth.sigma_r)
                records[strat.label] = metric_suite(fit.weights, test, truth, fit.sigma_hat)
                if fit.estimate is not None:
                    omegas[strat.label] = np.array(fit.estimate.fit.omega)
            except RobustMVPError as exc:
                failures[strat.label] = f"{type(exc).__name__}: {exc}"
        return ReplicationResult(replication, records, failures, omegas)


def _run_chunk(args):
    spec, reps, strategies = args
    truth = population(spec)
    return [run_replication(spec, k, strategies, truth) for k in reps]


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class SimReport:
    """Per-replication metrics for every strategy, in replication order.

    ``values[label]`` is an ``n_reps x 6`` array (columns as in ``METRICS``)
    with NaN rows for failed cells.
    """

    spec: DgpSpec
    labels: tuple
    values: dict
    failures: list
    omegas: dict

    @property
    def n_reps(self) -> int:
        return next(iter(self.values.values())).shape[0] if self.values else 0

    def metric(self, label: str, name: str) -> np.ndarray:
        return self.values[label][:, METRICS.index(name)]

    def mean(self, label: str, name: str) -> float:
        x = self.metric(label, name)
        x = x[np.isfinite(x)]
        return float(x.mean()) if x.size else float("nan")

    def std_error(self, label: str, name: str) -> float:
        x = self.metric(label, name)
        x = x[np.isfinite(x)]
        return float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else float("nan")

    def n_ok(self, label: str) -> int:
        return int(np.sum(np.isfinite(self.values[label][:, 0])))

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "statistic", "mean", "std_error", "n_ok"])
        for label in self.labels:
            for name in METRICS:
                w.writerow([label, name, _fmt(self.mean(label, name)), _fmt(self.std_error(label, name)), self.n_ok(label)])
        return buf.getvalue()

    def replications_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replication", "strategy", *METRICS, "status"])
        failed = {(k, label): msg for k, label, msg in self.failures}
        for k in range(self.n_reps):
            for label in self.labels:
                row = self.values[label][k]
                w.writerow([k, label, *(_fmt(v) for v in row), failed.get((k, label), "ok")])
        return buf.getvalue()

    def table_text(self) -> str:
        """Fixed-width table of means, all values multiplied by 100."""
        s = self.spec
        head = f"DGP {s.dgp_id}  p={s.p}  T={s.T}  replications={self.n_reps}  (values x 100)"
        width = max([len("Strategy")] + [len(lb) for lb in self.labels]) + 2
        cols = [METRIC_TITLES[m] for m in METRICS]
        lines = [head, "Strategy".ljust(width) + "".join(c.rjust(18) for c in cols)]
        for label in self.labels:
            cells = []
            for m in METRICS:
                v = self.mean(label, m)
                cells.append(("-" if np.isnan(v) else f"{100 * v:.3f}").rjust(18))
            lines.append(label.ljust(width) + "".join(cells))
        if self.failures:
            lines.append(f"failed cells: {len(self.failures)}")
        return "\n".join(lines) + "\n"

    def omega_trace_csv(self, label: str, replication: int = 0) -> str:
        """Period weights of one replication with shock markers."""
        om = self.omegas[label][replication]
        hetero = set(self.spec.hetero_dates.tolist())
        homo = set(self.spec.homo_dates.tolist())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "omega", "hetero_shock", "homo_shock"])
        for t, v in enumerate(om, start=1):
            w.writerow([t, _fmt(v), int(t in hetero), int(t in homo)])
        return buf.getvalue()


def run_replications(
    spec: DgpSpec,
    n_reps: int,
    strategies: Sequence[StrategySpec],
    parallel: bool = False,
    workers: Optional[int] = None,
) -> SimReport:
    """Fit every strategy on every replication and collect the metrics.

    Failed cells are logged and stored as NaN rows; the run continues.
    Results are assembled in replication order, so the report does not
    depend on ``parallel`` or ``workers``.
    """
    if n_reps < 1:
        raise InvalidSpec("n_reps must be at least 1")
    strategies = tuple(strategies)
    labels = tuple(s.label for s in strategies)
    if len(set(labels)) != len(labels):
        raise InvalidSpec(f"strategy labels must be unique, got {labels}")
    workers = workers or os.cpu_count() or 1
    if parallel and workers > 1 and n_reps > 1:
        chunks = [list(range(k, n_reps, workers)) for k in range(min(workers, n_reps))]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            parts = pool.map(_run_chunk, [(spec, c, strategies) for c in chunks])
            results = sorted((r for part in parts for r in part), key=lambda r: r.replication)
    else:
        results = _run_chunk((spec, range(n_reps), strategies))

    values = {lb: np.full((n_reps, len(METRICS)), np.nan) for lb in labels}
    omegas: dict = {}
    failures = []
    for res in results:
        for lb, rec in res.records.items():
            values[lb][res.replication] = [getattr(rec, m) for m in METRICS]
        for lb, msg in res.failures.items():
            logger.warning("replication %d, %s failed: %s", res.replication, lb, msg)
            failures.append((res.replication, lb, msg))
        for lb, om in res.omegas.items():
            omegas.setdefault(lb, np.full((n_reps, spec.T), np.nan))[res.replication] = om
    return SimReport(spec, labels, values, failures, omegas)


def spec_dict(spec: DgpSpec) -> dict:
    d = asdict(spec)
    d["mu_b"] = list(spec.mu_b)
    d["sigma_b"] = list(spec.sigma_b)
    d["ar_coeffs"] = list(spec.ar_coeffs)
    return d
