"""``robustmvp`` command line: simulate, estimate, backtest.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  ``ROBUSTMVP_THREADS`` overrides ``--threads``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import config as conf
from .artifacts import (
    BACKTEST_REPORT_SCHEMA,
    DIAGNOSTICS_SCHEMA,
    FACTOR_FIT_SCHEMA,
    SIGMA_E_SCHEMA,
    SIGMA_R_SCHEMA,
    factor_fit_doc,
    read_panel_csv,
    sparse_cov_doc,
    write_json,
    write_weights_csv,
)
from .backtest import complete_assets, rolling_backtest
from .errors import ConfigError, NoFeasibleCTau, NonFinite, NumericalError, RobustMVPError
from .portfolio import StrategySpec, fit_strategy
from .simlab import run_replications, synthetic_panel
from .types import validate_panel

logger = logging.getLogger("robustmvp")


def version_stamp() -> str:
    """Package version plus ``git describe`` of the source tree when available."""
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"robustmvp {__version__}" + (f" ({desc})" if desc else "")


def _csv_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _num_or(word: str):
    def parse(text: str):
        if text == word:
            return text
        try:
            return int(text)
        except ValueError:
            return float(text)

    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustmvp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"robustmvp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file; flags override its values")
    common.add_argument("--out", dest="output_dir", help="output directory")
    common.add_argument("--threads", type=_num_or("auto"), help="worker count or 'auto'")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    common.add_argument("--num-factors", type=_num_or("auto"), help="factor count or 'auto'")
    common.add_argument("--quantile", type=float, help="residual-norm quantile for the Huber threshold")
    common.add_argument("--c-tau", type=_num_or("cv"), help="thresholding constant or 'cv'")
    common.add_argument("--rule", choices=["soft", "hard"])

    sim = sub.add_parser("simulate", parents=[common], help="replicated Monte-Carlo experiment")
    sim.add_argument("--dgp", type=int, help="design 1..6")
    sim.add_argument("--p", type=int)
    sim.add_argument("--T", type=int)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--strategies", type=_csv_list)
    sim.add_argument("--tolerate-failures", type=int, help="failed cells allowed before a nonzero exit")
    sim.add_argument("--trace-replication", type=int, help="replication whose period weights are written")

    est = sub.add_parser("estimate", parents=[common], help="fit the covariance model to a panel CSV")
    est.add_argument("--panel", help="panel CSV")
    est.add_argument("--poet", action="store_true", help="classic estimator (every period weighted equally)")

    bt = sub.add_parser("backtest", parents=[common], help="rolling-window backtest")
    bt.add_argument("--panel", help="panel CSV; omit for a synthetic panel")
    bt.add_argument("--window", type=int)
    bt.add_argument("--hold", type=int)
    bt.add_argument("--cost-bps", type=float)
    bt.add_argument("--strategies", type=_csv_list)
    bt.add_argument("--param-policy", choices=["fix_at_first_node", "refit_each_node"])
    bt.add_argument("--weight-mode", choices=["drifted", "frozen"])
    bt.add_argument("--start", help="first time label to use")
    bt.add_argument("--end", help="last time label to use")
    return parser


def overrides_from(args) -> dict:
    out: dict = {}

    def put(path, value):
        if value is None:
            return
        node = out
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value

    put(["output_dir"], args.output_dir)
    put(["threads"], args.threads)
    put(["log_level"], args.log_level)
    put(["pca", "num_factors"], args.num_factors)
    put(["pca", "quantile_q"], args.quantile)
    put(["threshold", "c_tau"], args.c_tau)
    put(["threshold", "rule"], args.rule)
    if args.command == "simulate":
        put(["simulate", "dgp", "dgp_id"], args.dgp)
        put(["simulate", "dgp", "p"], args.p)
        put(["simulate", "dgp", "T"], args.T)
        put(["simulate", "dgp", "seed"], args.seed)
        put(["simulate", "n_reps"], args.reps)
        put(["simulate", "strategies"], args.strategies)
        put(["simulate", "tolerate_failures"], args.tolerate_failures)
        put(["simulate", "trace_replication"], args.trace_replication)
    elif args.command == "estimate":
        put(["estimate", "panel"], args.panel)
        if args.poet:
            put(["estimate", "strategy"], "poet_mvp")
    else:
        put(["backtest", "panel"], args.panel)
        put(["backtest", "window"], args.window)
        put(["backtest", "hold"], args.hold)
        put(["backtest", "cost_bps"], args.cost_bps)
        put(["backtest", "strategies"], args.strategies)
        put(["backtest", "param_policy"], args.param_policy)
        put(["backtest", "weight_mode"], args.weight_mode)
        put(["backtest", "start"], args.start)
        put(["backtest", "end"], args.end)
    return out


def _prepare_output(cfg: dict, command: str) -> Path:
    out = Path(cfg["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    (out / "effective_config.toml").write_text(f"# command: {command}\n" + conf.dumps(cfg))
    (out / "version.txt").write_text(version_stamp() + "\n")
    return out


def cmd_simulate(cfg: dict) -> int:
    s = cfg["simulate"]
    spec = conf.dgp_spec(s["dgp"])
    strategies = conf.strategies(cfg, s["strategies"])
    if s["trace_replication"] >= s["n_reps"]:
        raise ConfigError(
            f"invalid config field 'simulate.trace_replication': {s['trace_replication']} is not below n_reps={s['n_reps']}"
        )
    threads = conf.resolve_threads(cfg["threads"])
    out = _prepare_output(cfg, "simulate")
    report = run_replications(spec, s["n_reps"], strategies, parallel=threads > 1, workers=threads)
    (out / "sim_report.csv").write_text(report.summary_csv())
    (out / "sim_report.txt").write_text(report.table_text())
    (out / "metrics.csv").write_text(report.replications_csv())
    traced = [lb for lb in report.labels if lb in report.omegas]
    if traced:
        label = "r_mvp" if "r_mvp" in traced else traced[0]
        (out / "omega_trace.csv").write_text(report.omega_trace_csv(label, s["trace_replication"]))
    print(report.table_text(), end="")
    if len(report.failures) > s["tolerate_failures"]:
        print(
            f"error: {len(report.failures)} failed cells exceed --tolerate-failures={s['tolerate_failures']}",
            file=sys.stderr,
        )
        return NumericalError.exit_code
    return 0


def _write_cv_curve(path: Path, diag) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["c_tau", "loss", "min_eig", "feasible"])
        for c, loss, eig, ok in diag.rows():
            w.writerow([repr(c), repr(loss), repr(eig), int(ok)])


def _load_complete_panel(path: str):
    values, ids, index = read_panel_csv(path)
    try:
        return validate_panel(values, ids, index)
    except NonFinite as exc:
        raise NonFinite(
            exc.row, exc.col, f"{path}: non-finite value at data row {exc.row + 1} (time {index[exc.row]}), asset {ids[exc.col]!r}"
        ) from None


def cmd_estimate(cfg: dict) -> int:
    e = cfg["estimate"]
    if not e["panel"]:
        raise ConfigError("invalid config field 'estimate.panel': a panel CSV is required")
    panel = _load_complete_panel(e["panel"])
    out = _prepare_output(cfg, "estimate")
    spec = StrategySpec(e["strategy"], pca=conf.pca_config(cfg), threshold=conf.threshold_config(cfg))
    try:
        fit = fit_strategy(spec, panel)
    except NoFeasibleCTau as exc:
        if exc.curve is not None:
            _write_cv_curve(out / "cv_curve.csv", exc.curve)
            for c, loss, eig, ok in exc.curve.rows():
                print(f"c_tau={c:g} loss={loss:.6e} min_eig={eig:.3e} feasible={ok}", file=sys.stderr)
        raise
    est = fit.estimate
    ids = panel.asset_ids
    write_json(out / "factor_fit.json", factor_fit_doc(est.fit, ids, panel.time_index), FACTOR_FIT_SCHEMA)
    write_json(out / "sigma_e.json", sparse_cov_doc(est.residual_cov, ids), SIGMA_E_SCHEMA)
    write_json(
        out / "sigma_r.json",
        {"asset_ids": list(ids), "matrix": est.model.sigma_r, "num_factors": est.fit.num_factors},
        SIGMA_R_SCHEMA,
    )
    write_weights_csv(out / "weights.csv", ids, fit.weights)
    counts, edges = np.histogram(est.fit.omega, bins=10, range=(0.0, 0.5))
    cv = None
    if est.cv is not None:
        _write_cv_curve(out / "cv_curve.csv", est.cv)
        cv = {"c_star": est.cv.c_star, "c_lower": est.cv.c_lower, "grid": list(est.cv.grid), "loss": est.cv.loss}
    write_json(
        out / "diagnostics.json",
        {
            "objective_trace": list(est.fit.objective_trace),
            "omega_histogram": {"edges": edges, "counts": counts},
            "share_half": float(np.mean(est.fit.omega == 0.5)),
            "cv": cv,
        },
        DIAGNOSTICS_SCHEMA,
    )
    print(
        f"m={est.fit.num_factors} iterations={est.fit.iterations} converged={est.fit.converged} "
        f"c_tau={est.residual_cov.c_tau:g} sparsity={est.residual_cov.sparsity:.3f}"
    )
    return 0


def _label_arg(x):
    if x in (None, ""):
        return None
    try:
        return int(x)
    except (TypeError, ValueError):
        return x


def cmd_backtest(cfg: dict) -> int:
    b = cfg["backtest"]
    spec = conf.backtest_spec(cfg)
    start, end = _label_arg(b["start"]), _label_arg(b["end"])
    if b["panel"]:
        values, ids, index = read_panel_csv(b["panel"])
        panel, dropped = complete_assets(values, ids, index, start, end)
    else:
        dgp, periods = conf.synthetic_dgp(b["synthetic"])
        panel, dropped = synthetic_panel(dgp).rows(0, periods), []
        if start is not None or end is not None:
            panel, dropped = complete_assets(panel.values, panel.asset_ids, panel.time_index, start, end)
    out = _prepare_output(cfg, "backtest")
    spec = dataclasses.replace(spec, start=None, end=None)
    report = rolling_backtest(panel, spec, dropped)
    labels = list(report.results)
    node_params = {
        lb: [{"num_factors": r.pca.num_factors, "c_tau": r.threshold.c_tau} for r in res.resolved]
        for lb, res in report.results.items()
        if res.resolved and res.resolved[0].uses_factor_model
    }
    write_json(
        out / "report.json",
        {
            "spec": {
                "window": spec.window_T,
                "hold": spec.holding_HT,
                "cost_c": spec.cost_c,
                "param_policy": spec.param_policy,
                "weight_mode": spec.weight_mode,
                "strategies": labels,
            },
            "asset_ids": list(report.asset_ids),
            "dropped_assets": list(report.dropped),
            "node_labels": list(report.node_labels),
            "strategies": report.summary(),
            "node_parameters": node_params,
        },
        BACKTEST_REPORT_SCHEMA,
    )
    with open(out / "weights.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "node", "time", *report.asset_ids])
        for lb, res in report.results.items():
            for k, row in enumerate(res.targets):
                w.writerow([lb, k, report.node_labels[k], *(repr(float(v)) for v in row)])
    with open(out / "returns.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", *(f"{lb}_{kind}" for lb in labels for kind in ("gross", "net"))])
        for t, label in enumerate(report.period_labels):
            row = []
            for lb in labels:
                row += [repr(float(report.results[lb].gross[t])), repr(float(report.results[lb].net[t]))]
            w.writerow([label, *row])
    with open(out / "equity_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", *labels])
        curves = [np.cumsum(report.results[lb].net) for lb in labels]
        for t, label in enumerate(report.period_labels):
            w.writerow([label, *(repr(float(c[t])) for c in curves)])
    for lb, summ in report.summary().items():
        print(lb, " ".join(f"{k}={v:.6g}" for k, v in summ.items()))
    return 0


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "backtest": cmd_backtest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = conf.load(args.config, overrides_from(args))
        if args.print_config:
            print(conf.dumps(cfg), end="")
            return 0
        logging.basicConfig(level=cfg["log_level"], format="%(levelname)s %(name)s: %(message)s")
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](cfg)
    except RobustMVPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
