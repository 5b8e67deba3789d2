"""Rolling-window backtests with drift, transaction costs and turnover.

Calendar: with panel length ``L``, window ``T`` and holding period ``HT``
there are ``K = floor((L - T) / HT)`` decision nodes.  Node ``k`` fits on
rows ``[k HT, k HT + T)`` and holds over rows ``[k HT + T, (k+1) HT + T)``.
Between nodes the weights drift with realized asset returns, and the cost
of moving from the drifted weights to the next target is charged on the
last return of the holding block.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    BacktestNodeError,
    InsufficientHistory,
    InvalidSpec,
    LengthMismatch,
    RobustMVPError,
    TooFewRebalances,
)
from .metrics import cumulative_return, max_drawdown, oos_risk, sharpe
from .portfolio import StrategySpec, fit_strategy
from .types import ReturnPanel

logger = logging.getLogger(__name__)

PARAM_POLICIES = ("fix_at_first_node", "refit_each_node")
WEIGHT_MODES = ("drifted", "frozen")


@dataclass(frozen=True)
class BacktestSpec:
    """Rolling-window protocol.

    ``weight_mode="frozen"`` holds the target weights constant within each
    block (an implicit costless daily rebalance) instead of letting them
    drift; it exists for sensitivity checks.
    """

    window_T: int = 400
    holding_HT: int = 21
    cost_c: float = 0.001
    strategies: tuple = field(default_factory=lambda: (StrategySpec("r_mvp"), StrategySpec("poet_mvp"), StrategySpec("equal_weight")))
    start: Optional[object] = None
    end: Optional[object] = None
    param_policy: str = "fix_at_first_node"
    weight_mode: str = "drifted"

    def __post_init__(self):
        if self.window_T < 2 or self.holding_HT < 1:
            raise InvalidSpec(f"need window_T >= 2 and holding_HT >= 1, got {self.window_T}, {self.holding_HT}")
        if not (np.isfinite(self.cost_c) and self.cost_c >= 0):
            raise InvalidSpec(f"cost_c must be nonnegative, got {self.cost_c}")
        if self.param_policy not in PARAM_POLICIES:
            raise InvalidSpec(f"param_policy must be one of {PARAM_POLICIES}, got {self.param_policy!r}")
        if self.weight_mode not in WEIGHT_MODES:
            raise InvalidSpec(f"weight_mode must be one of {WEIGHT_MODES}, got {self.weight_mode!r}")
        object.__setattr__(self, "strategies", tuple(self.strategies))
        if not self.strategies:
            raise InvalidSpec("at least one strategy is required")
        labels = [s.label for s in self.strategies]
        if len(set(labels)) != len(labels):
            raise InvalidSpec(f"strategy labels must be unique, got {labels}")

    def num_nodes(self, length: int) -> int:
        return (length - self.window_T) // self.holding_HT


def complete_assets(values, asset_ids, time_index, start=None, end=None):
    """Restrict to ``[start, end]`` and drop assets with any missing value.

    Returns
    -------
    panel : ReturnPanel
    dropped : list of str
    """
    X = np.asarray(values, dtype=np.float64)
    index = np.asarray(time_index)
    rows = np.ones(X.shape[0], dtype=bool)
    if start is not None:
        rows &= index >= start
    if end is not None:
        rows &= index <= end
    X, index = X[rows], index[rows]
    keep = np.all(np.isfinite(X), axis=0)
    dropped = [str(a) for a, k in zip(asset_ids, keep) if not k]
    if dropped:
        logger.info("dropping %d assets without complete history: %s", len(dropped), ", ".join(dropped))
    ids = [str(a) for a, k in zip(asset_ids, keep) if k]
    return ReturnPanel(X[:, keep], ids, index.tolist()), dropped


def drift(weights, asset_returns) -> np.ndarray:
    """Weights after one period of buy-and-hold: ``w (1 + r) / (1 + w'r)``."""
    w = np.asarray(weights, dtype=np.float64)
    g = w * (1.0 + np.asarray(asset_returns, dtype=np.float64))
    return g / g.sum()


def hold_block(target, block: np.ndarray, weight_mode: str = "drifted"):
    """Portfolio returns over one holding block and the end-of-block weights."""
    w = np.asarray(target, dtype=np.float64)
    out = np.empty(block.shape[0])
    for t, r in enumerate(block):
        out[t] = w @ r
        if weight_mode == "drifted":
            w = drift(w, r)
    return out, w


def rebalance_trades(targets, pre_weights) -> np.ndarray:
    """``sum_i |W_{k+1,i} - W+_{k,i}|`` for each of the ``K - 1`` rebalances."""
    W = np.asarray(targets, dtype=np.float64)
    Wp = np.asarray(pre_weights, dtype=np.float64)
    if W.shape != Wp.shape:
        raise LengthMismatch(f"targets {W.shape} and drifted weights {Wp.shape} differ")
    return np.abs(W[1:] - Wp[:-1]).sum(axis=1)


def net_returns(gross, targets, pre_weights, holding_HT: int, cost_c: float) -> np.ndarray:
    """Charge ``c * |W_{k+1} - W+_k|_1`` on the last return of block ``k``.

    ``r_net = (1 - cost) (1 + r) - 1``, evaluated as ``r - cost (1 + r)``
    so a zero cost leaves the return untouched bit for bit.
    """
    gross = np.asarray(gross, dtype=np.float64)
    K = np.asarray(targets).shape[0]
    if gross.shape != (K * holding_HT,):
        raise LengthMismatch(f"gross series has length {gross.shape[0]}, calendar needs {K * holding_HT}")
    net = gross.copy()
    cost = cost_c * rebalance_trades(targets, pre_weights)
    at = np.arange(1, K) * holding_HT - 1
    net[at] = gross[at] - cost * (1.0 + gross[at])
    return net


def turnover(targets, pre_weights) -> float:
    """Mean trade size over the ``K - 1`` rebalances."""
    if np.asarray(targets).shape[0] < 2:
        raise TooFewRebalances("turnover needs at least two decision nodes")
    return float(rebalance_trades(targets, pre_weights).mean())


@dataclass(frozen=True, eq=False)
class StrategyResult:
    label: str
    targets: np.ndarray
    pre_weights: np.ndarray
    gross: np.ndarray
    net: np.ndarray
    resolved: tuple

    def summary(self) -> dict:
        return {
            "cumulative_return": cumulative_return(self.net),
            "oos_risk": oos_risk(self.net),
            "sharpe": sharpe(self.net),
            "mdd": max_drawdown(self.net),
            "turnover": turnover(self.targets, self.pre_weights),
            "gross_cumulative_return": cumulative_return(self.gross),
        }


@dataclass(frozen=True, eq=False)
class BacktestReport:
    spec: BacktestSpec
    asset_ids: tuple
    node_labels: tuple
    period_labels: tuple
    results: dict
    dropped: tuple = ()

    def summary(self) -> dict:
        return {label: res.summary() for label, res in self.results.items()}


def _pin(spec: StrategySpec, resolved: Optional[StrategySpec]) -> StrategySpec:
    return resolved if resolved is not None and spec.uses_factor_model else spec


def rolling_backtest(panel: ReturnPanel, spec: BacktestSpec, dropped: Sequence[str] = ()) -> BacktestReport:
    """Refit every strategy at each node and track gross and net returns.

    Under ``fix_at_first_node`` the factor number and ``c_tau`` chosen at
    node 0 are reused at all later nodes.
    """
    if spec.start is not None or spec.end is not None:
        panel, more = complete_assets(panel.values, panel.asset_ids, panel.time_index, spec.start, spec.end)
        dropped = tuple(dropped) + tuple(more)
    L = panel.T
    if L < spec.window_T + spec.holding_HT:
        raise InsufficientHistory(
            f"panel has {L} periods, window {spec.window_T} plus holding {spec.holding_HT} needs {spec.window_T + spec.holding_HT}"
        )
    K = spec.num_nodes(L)
    if K < 2:
        raise TooFewRebalances(f"only {K} decision node; at least two are needed to rebalance")
    T, HT = spec.window_T, spec.holding_HT
    R = panel.values
    results = {}
    for strat in spec.strategies:
        targets = np.empty((K, panel.p))
        pre = np.empty((K, panel.p))
        gross = np.empty(K * HT)
        current = strat
        pinned = []
        for k in range(K):
            lo = k * HT
            window = panel.rows(lo, lo + T)
            try:
                fit = fit_strategy(current, window)
            except RobustMVPError as exc:
                raise BacktestNodeError(k, panel.time_index[lo + T], strat.label, exc) from exc
            if spec.param_policy == "fix_at_first_node" and k == 0:
                current = _pin(strat, fit.resolved)
            pinned.append(fit.resolved)
            targets[k] = fit.weights.weights
            gross[k * HT : (k + 1) * HT], pre[k] = hold_block(targets[k], R[lo + T : lo + T + HT], spec.weight_mode)
        net = net_returns(gross, targets, pre, HT, spec.cost_c)
        results[strat.label] = StrategyResult(strat.label, targets, pre, gross, net, tuple(pinned))
    return BacktestReport(
        spec,
        tuple(panel.asset_ids),
        tuple(panel.time_index[k * HT + T] for k in range(K)),
        tuple(panel.time_index[T : T + K * HT]),
        results,
        tuple(dropped),
    )
