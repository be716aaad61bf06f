"""Evaluation criteria for estimated explanations.

* ``ec1``: mean absolute error of Shapley values against the truth.
* ``ec2``: mean squared error of contribution values against the truth.
* ``ec3``: truth-free mean squared distance between the prediction ``f(x)``
  and the contribution values.

Contribution tables are ``(n_instances, n_coalitions)`` arrays over the proper
coalitions of a plan; coalition multiplicities act as weights.
"""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np


class InputError(ValueError):
    """Arguments do not line up."""


def _pair(a, b):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise InputError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def instance_mae(phi_true, phi_hat):
    a, b = _pair(phi_true, phi_hat)
    return np.mean(np.abs(a - b), axis=1)


def ec1(phi_true, phi_hat):
    return float(np.mean(instance_mae(phi_true, phi_hat)))


def ec1_weighted(phi_true, phi_hat, weights):
    """Instance errors weighted by ``weights`` (renormalized to sum to one)."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise InputError("weights must be non-negative")
    mae = instance_mae(phi_true, phi_hat)
    if w.shape != mae.shape or not w.sum() > 0:
        raise InputError("need one non-negative weight per instance with positive total")
    return float(np.sum(w / w.sum() * mae))


def _weights(counts, n_coal):
    if counts is None:
        return np.full(n_coal, 1.0 / n_coal)
    c = np.asarray(counts, dtype=np.float64)
    if c.shape != (n_coal,) or np.any(c <= 0):
        raise InputError("one positive multiplicity per coalition is required")
    return c / c.sum()


def ec2(v_true, v_hat, counts=None):
    """Mean over instances and coalitions of ``(v_true - v_hat)**2``."""
    a, b = _pair(v_true, v_hat)
    if np.any(~np.isfinite(a)) or np.any(~np.isfinite(b)):
        raise InputError("contribution tables have gaps")
    w = _weights(counts, a.shape[1])
    return float(np.mean(((a - b) ** 2) @ w))


def ec3(fx, v_hat, counts=None):
    """Mean over instances and coalitions of ``(f(x) - v_hat)**2``."""
    v = np.atleast_2d(np.asarray(v_hat, dtype=np.float64))
    fx = np.asarray(fx, dtype=np.float64).reshape(-1, 1)
    if fx.shape[0] != v.shape[0]:
        raise InputError("one prediction per instance is required")
    if np.any(~np.isfinite(v)):
        raise InputError("contribution table has gaps")
    w = _weights(counts, v.shape[1])
    return float(np.mean(((fx - v) ** 2) @ w))


@dataclass
class EvalReport:
    method: str
    repetition: int
    ec1: float = None
    ec2: float = None
    ec3: float = None
    n_test: int = 0
    n_coalitions: float = 0
    K: int = None
    extra: dict = field(default_factory=dict)

    def row(self):
        return asdict(self)


CSV_FIELDS = ["method", "repetition", "K", "ec1", "ec2", "ec3", "n_test", "n_coalitions"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_reports_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in reports:
            w.writerow([_fmt(getattr(r, k)) for k in CSV_FIELDS])


def aggregate(reports):
    """Mean criteria per method over repetitions."""
    out = {}
    for r in reports:
        out.setdefault(r.method, []).append(r)
    agg = {}
    for method, rs in out.items():
        agg[method] = {}
        for k in ("ec1", "ec2", "ec3"):
            vals = [getattr(r, k) for r in rs if getattr(r, k) is not None]
            agg[method][k] = float(np.mean(vals)) if vals else None
        agg[method]["repetitions"] = len(rs)
    return agg


def write_reports_json(path, reports, extra=None):
    doc = {"reports": [r.row() for r in reports], "aggregate": aggregate(reports)}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
