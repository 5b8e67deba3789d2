"""Reading panels and writing schema-checked output files.

Panel CSV format: a header row ``<time>,<asset_1>,...,<asset_p>`` followed
by one row per period.  Time labels that are all integers are read as
integers, otherwise as strings (ISO dates sort correctly).  Empty cells
and ``NaN`` mark missing values.

JSON floats are written with Python's shortest round-trip repr, so reading
a file back reproduces every array bit for bit.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import jsonschema
import numpy as np

from .errors import DataError, DimensionMismatch
from .types import FactorFit, SparseResidualCov

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}
_ids = {"type": "array", "items": {"type": "string"}}
_labels = {"type": "array", "items": {"type": ["string", "integer"]}}

FACTOR_FIT_SCHEMA = {
    "type": "object",
    "required": ["loadings", "factors", "omega", "tau", "num_factors", "iterations", "final_delta", "converged"],
    "properties": {
        "asset_ids": _ids,
        "time_index": _labels,
        "loadings": _matrix,
        "factors": _matrix,
        "omega": _vector,
        "tau": {"type": "number", "exclusiveMinimum": 0},
        "num_factors": {"type": "integer", "minimum": 0},
        "iterations": {"type": "integer", "minimum": 0},
        "final_delta": {"type": "number", "minimum": 0},
        "converged": {"type": "boolean"},
        "objective_trace": _vector,
        "factor_cov": {"anyOf": [_matrix, {"type": "null"}]},
        "degenerate": {"type": "boolean"},
    },
}
SIGMA_E_SCHEMA = {
    "type": "object",
    "required": ["matrix", "c_tau", "rule", "sparsity"],
    "properties": {
        "asset_ids": _ids,
        "matrix": _matrix,
        "c_tau": {"type": "number", "minimum": 0},
        "rule": {"enum": ["soft", "hard"]},
        "sparsity": {"type": "number", "minimum": 0, "maximum": 1},
    },
}
SIGMA_R_SCHEMA = {
    "type": "object",
    "required": ["asset_ids", "matrix", "num_factors"],
    "properties": {"asset_ids": _ids, "matrix": _matrix, "num_factors": {"type": "integer", "minimum": 0}},
}
DIAGNOSTICS_SCHEMA = {
    "type": "object",
    "required": ["objective_trace", "omega_histogram"],
    "properties": {
        "objective_trace": _vector,
        "omega_histogram": {
            "type": "object",
            "required": ["edges", "counts"],
            "properties": {"edges": _vector, "counts": {"type": "array", "items": {"type": "integer"}}},
        },
        "share_half": {"type": "number"},
        "cv": {"type": ["object", "null"]},
    },
}
BACKTEST_REPORT_SCHEMA = {
    "type": "object",
    "required": ["spec", "asset_ids", "dropped_assets", "node_labels", "strategies"],
    "properties": {
        "spec": {"type": "object"},
        "asset_ids": _ids,
        "dropped_assets": _ids,
        "node_labels": _labels,
        "strategies": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["cumulative_return", "oos_risk", "sharpe", "mdd", "turnover"],
                "properties": {
                    "cumulative_return": {"type": "number"},
                    "oos_risk": {"type": "number", "minimum": 0},
                    "sharpe": {"type": "number"},
                    "mdd": {"type": "number", "minimum": 0},
                    "turnover": {"type": "number", "minimum": 0},
                },
            },
        },
        "node_parameters": {"type": "object"},
    },
}


def read_panel_csv(path: str | os.PathLike):
    """Parse a panel CSV into ``(values, asset_ids, time_index)``.

    Missing cells become NaN; the caller decides whether to reject them
    or drop the asset.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read panel {path}: {exc}") from exc
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise DimensionMismatch(f"{path}: need a header and at least one data row")
    header, body = rows[0], rows[1:]
    ids = [h.strip() for h in header[1:]]
    values = np.empty((len(body), len(ids)))
    labels = []
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DimensionMismatch(f"{path}: data row {i + 1} has {len(row)} fields, header has {len(header)}")
        labels.append(row[0].strip())
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            try:
                values[i, j] = float(cell) if cell else np.nan
            except ValueError as exc:
                raise DataError(f"{path}: row {i + 1}, column {ids[j]!r}: cannot parse {cell!r}") from exc
    try:
        index = [int(s) for s in labels]
    except ValueError:
        index = labels
    return values, ids, index


def write_panel_csv(path, panel) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", *panel.asset_ids])
        for t, row in zip(panel.time_index, panel.values):
            w.writerow([t, *(repr(float(v)) for v in row)])


def _plain(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    return x


def write_json(path, obj: dict, schema: dict) -> dict:
    """Validate ``obj`` against ``schema`` and write it; returns the plain dict."""
    doc = _plain(obj)
    jsonschema.validate(doc, schema)
    text = json.dumps(doc, indent=1, allow_nan=False)
    Path(path).write_text(text + "\n")
    return doc


def read_json(path, schema: dict | None = None) -> dict:
    doc = json.loads(Path(path).read_text())
    if schema is not None:
        jsonschema.validate(doc, schema)
    return doc


def factor_fit_doc(fit: FactorFit, asset_ids=None, time_index=None) -> dict:
    doc = {
        "loadings": fit.loadings,
        "factors": fit.factors,
        "omega": fit.omega,
        "tau": fit.tau,
        "num_factors": fit.num_factors,
        "iterations": fit.iterations,
        "final_delta": fit.final_delta,
        "converged": bool(fit.converged),
        "objective_trace": list(fit.objective_trace),
        "factor_cov": fit.factor_cov,
        "degenerate": bool(fit.degenerate),
    }
    if asset_ids is not None:
        doc["asset_ids"] = list(asset_ids)
    if time_index is not None:
        doc["time_index"] = list(time_index)
    return doc


def _mat(x, cols: int) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a if a.ndim == 2 else a.reshape(0, cols)


def factor_fit_from_doc(doc: dict) -> FactorFit:
    m = doc["num_factors"]
    fc = doc.get("factor_cov")
    return FactorFit(
        loadings=_mat(doc["loadings"], m),
        factors=_mat(doc["factors"], m),
        omega=np.asarray(doc["omega"], dtype=np.float64),
        tau=doc["tau"],
        num_factors=m,
        iterations=doc["iterations"],
        final_delta=doc["final_delta"],
        converged=doc["converged"],
        objective_trace=tuple(doc.get("objective_trace", ())),
        factor_cov=None if fc is None else _mat(fc, m),
        degenerate=doc.get("degenerate", False),
    )


def sparse_cov_doc(cov: SparseResidualCov, asset_ids=None) -> dict:
    doc = {"matrix": cov.matrix, "c_tau": cov.c_tau, "rule": cov.rule, "sparsity": cov.sparsity}
    if asset_ids is not None:
        doc["asset_ids"] = list(asset_ids)
    return doc


def sparse_cov_from_doc(doc: dict) -> SparseResidualCov:
    return SparseResidualCov(np.asarray(doc["matrix"], dtype=np.float64), doc["c_tau"], doc["rule"])


def write_weights_csv(path, asset_ids, weights) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["asset_id", "weight"])
        for a, v in zip(asset_ids, getattr(weights, "weights", weights)):
            w.writerow([a, repr(float(v))])


def read_weights_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [r[0] for r in rows], np.array([float(r[1]) for r in rows])
