"""TOML run configuration.

Every key has a default (``DEFAULTS``); a user file only needs the keys it
changes.  The merged document is validated against ``CONFIG_SCHEMA`` so
errors name the offending field, then turned into the typed specs used by
the library.
"""

from __future__ import annotations

import copy
import math
import os
import sys
from typing import Any

import jsonschema
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backtest import BacktestSpec
from .errors import ConfigError
from .factors import RobustPcaConfig
from .portfolio import STRATEGY_KINDS, StrategySpec
from .simlab import DgpSpec, SyntheticSigmaE
from .threshold import DEFAULT_GRID, ThresholdConfig

COMMANDS = ("simulate", "estimate", "backtest")

DEFAULTS: dict[str, Any] = {
    "output_dir": "robustmvp-out",
    "log_level": "INFO",
    "threads": "auto",
    "pca": {
        "num_factors": "auto",
        "quantile_q": 0.9,
        "max_iter": 100,
        "tol": 1e-10,
        "max_factors_M": 5,
        "reselect_factors": False,
        "factor_scale": "weighted",
    },
    "threshold": {
        "c_tau": 0.5,
        "rule": "soft",
        "cv_folds": 5,
        "cv_grid": list(DEFAULT_GRID),
        "cv_seed": 0,
    },
    "shrinkage_intensity": "auto",
    "simulate": {
        "n_reps": 50,
        "strategies": ["oracle_mvp", "r_mvp", "poet_mvp", "linear_shrinkage_mvp", "equal_weight"],
        "tolerate_failures": 0,
        "trace_replication": 0,
        "dgp": {
            "dgp_id": 1,
            "p": 50,
            "T": 100,
            "mu_b": [0.018, -0.001],
            "sigma_b": [0.0072, 0.0084],
            "ar_coeffs": [0.6, 0.95],
            "ar_intercept": 0.01,
            "freq_hetero": 50,
            "freq_homo": 40,
            "seed": 0,
            "residual_cov_spec": {
                "kind": "banded",
                "base_variance": 0.00044,
                "off_diag_decay": 0.3,
                "bandwidth": 3,
            },
        },
    },
    "estimate": {
        "panel": "",
        "strategy": "r_mvp",
    },
    "backtest": {
        "panel": "",
        "window": 400,
        "hold": 21,
        "cost_bps": 10.0,
        "strategies": ["r_mvp", "poet_mvp", "equal_weight"],
        "param_policy": "fix_at_first_node",
        "weight_mode": "drifted",
        "start": "",
        "end": "",
        "synthetic": {"dgp_id": 4, "p": 50, "periods": 756, "seed": 0},
    },
}

_num = {"type": "number"}
_int = {"type": "integer"}
_str = {"type": "string"}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_kinds = {"type": "array", "items": {"enum": list(STRATEGY_KINDS)}, "minItems": 1}


def _table(props: dict, required=None) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, **({"required": required} if required else {})}


CONFIG_SCHEMA = _table(
    {
        "output_dir": _str,
        "log_level": {"enum": ["DEBUG", "INFO", "WARNING", "ERROR"]},
        "threads": {"anyOf": [{"type": "integer", "minimum": 1}, {"const": "auto"}]},
        "pca": _table(
            {
                "num_factors": {"anyOf": [{"type": "integer", "minimum": 0}, {"const": "auto"}]},
                "quantile_q": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "max_iter": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "minimum": 0},
                "max_factors_M": {"type": "integer", "minimum": 1},
                "reselect_factors": {"type": "boolean"},
                "factor_scale": {"enum": ["weighted", "identity"]},
            }
        ),
        "threshold": _table(
            {
                "c_tau": {"anyOf": [{"type": "number", "minimum": 0}, {"const": "cv"}]},
                "rule": {"enum": ["soft", "hard"]},
                "cv_folds": {"type": "integer", "minimum": 2},
                "cv_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "cv_seed": {"type": "integer", "minimum": 0},
            }
        ),
        "shrinkage_intensity": {"anyOf": [{"type": "number", "minimum": 0, "maximum": 1}, {"const": "auto"}]},
        "simulate": _table(
            {
                "n_reps": {"type": "integer", "minimum": 1},
                "strategies": _kinds,
                "tolerate_failures": {"type": "integer", "minimum": 0},
                "trace_replication": {"type": "integer", "minimum": 0},
                "dgp": _table(
                    {
                        "dgp_id": {"type": "integer", "enum": [1, 2, 3, 4, 5, 6]},
                        "p": {"type": "integer", "minimum": 2},
                        "T": {"type": "integer", "minimum": 2},
                        "mu_b": _pair,
                        "sigma_b": _pair,
                        "ar_coeffs": _pair,
                        "ar_intercept": _num,
                        "shock_multiplier": _num,
                        "shock_cov_scale": {"type": "number", "minimum": 0},
                        "freq_hetero": {"type": "integer", "minimum": 1},
                        "freq_homo": {"type": "integer", "minimum": 1},
                        "seed": {"type": "integer", "minimum": 0},
                        "residual_cov_spec": _table(
                            {
                                "kind": {"enum": ["banded", "block_diag"]},
                                "base_variance": {"type": "number", "exclusiveMinimum": 0},
                                "off_diag_decay": _num,
                                "bandwidth": {"type": "integer", "minimum": 0},
                            }
                        ),
                    }
                ),
            }
        ),
        "estimate": _table({"panel": _str, "strategy": {"enum": ["r_mvp", "poet_mvp"]}}),
        "backtest": _table(
            {
                "panel": _str,
                "window": {"type": "integer", "minimum": 2},
                "hold": {"type": "integer", "minimum": 1},
                "cost_bps": {"type": "number", "minimum": 0},
                "strategies": _kinds,
                "param_policy": {"enum": ["fix_at_first_node", "refit_each_node"]},
                "weight_mode": {"enum": ["drifted", "frozen"]},
                "start": {"type": ["string", "integer"]},
                "end": {"type": ["string", "integer"]},
                "synthetic": _table(
                    {
                        "dgp_id": {"type": "integer", "enum": [1, 2, 3, 4, 5, 6]},
                        "p": {"type": "integer", "minimum": 2},
                        "periods": {"type": "integer", "minimum": 4},
                        "seed": {"type": "integer", "minimum": 0},
                    }
                ),
            }
        ),
    }
)


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; ``override`` wins, nested tables are merged."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _field(path) -> str:
    return ".".join(str(p) for p in path) or "<root>"


def validate(cfg: dict) -> dict:
    """Check ``cfg`` against the schema; raise ``ConfigError`` naming the field."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(f"invalid config field '{_field(err.absolute_path)}': {err.message}")
    return cfg


def load(path: str | os.PathLike | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the TOML file at ``path``, then ``overrides``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path, "rb") as fh:
                user = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = merge(cfg, user)
    if overrides:
        cfg = merge(cfg, overrides)
    return validate(cfg)


def dumps(cfg: dict) -> str:
    return tomli_w.dumps(cfg)


def pca_config(cfg: dict) -> RobustPcaConfig:
    return RobustPcaConfig(**cfg["pca"])


def threshold_config(cfg: dict) -> ThresholdConfig:
    t = dict(cfg["threshold"])
    t["cv_grid"] = tuple(t["cv_grid"])
    return ThresholdConfig(**t)


def strategies(cfg: dict, kinds) -> tuple[StrategySpec, ...]:
    pca, thr = pca_config(cfg), threshold_config(cfg)
    return tuple(
        StrategySpec(k, pca=pca, threshold=thr, shrinkage_intensity=cfg["shrinkage_intensity"]) for k in kinds
    )


def dgp_spec(table: dict) -> DgpSpec:
    d = dict(table)
    d["residual_cov_spec"] = SyntheticSigmaE(**d.get("residual_cov_spec", {}))
    for key in ("mu_b", "sigma_b", "ar_coeffs"):
        if key in d:
            d[key] = tuple(d[key])
    return DgpSpec(**d)


def synthetic_dgp(table: dict) -> tuple[DgpSpec, int]:
    """DGP spec whose ``2T`` periods cover ``periods``."""
    periods = table["periods"]
    spec = DgpSpec(dgp_id=table["dgp_id"], p=table["p"], T=math.ceil(periods / 2), seed=table["seed"])
    return spec, periods


def backtest_spec(cfg: dict) -> BacktestSpec:
    b = cfg["backtest"]
    return BacktestSpec(
        window_T=b["window"],
        holding_HT=b["hold"],
        cost_c=b["cost_bps"] / 1e4,
        strategies=strategies(cfg, b["strategies"]),
        start=b["start"] if b["start"] != "" else None,
        end=b["end"] if b["end"] != "" else None,
        param_policy=b["param_policy"],
        weight_mode=b["weight_mode"],
    )


def resolve_threads(cfg_threads, env=None) -> int:
    """``ROBUSTMVP_THREADS`` beats the config/flag value; ``auto`` is the CPU count."""
    env = os.environ if env is None else env
    value = env.get("ROBUSTMVP_THREADS") or cfg_threads
    if value == "auto":
        return os.cpu_count() or 1
    try:
        n = int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"threads must be a positive integer or 'auto', got {value!r}") from exc
    if n < 1:
        raise ConfigError(f"threads must be a positive integer or 'auto', got {value!r}")
    return n
