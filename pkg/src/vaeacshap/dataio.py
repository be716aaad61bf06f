"""Dataset CSV files with a JSON schema sidecar.

The sidecar ``<csv>.schema.json`` lists each column's kind and levels, the
response column, and the generator description and seed when the data were
simulated, so a dataset can be regenerated exactly.
"""

import csv
import json
import os

import numpy as np

from .vaeac import FeatureSchema, SchemaError


def sidecar_path(path):
    return f"{path}.schema.json"


def _fmt(v):
    return f"{v:.17g}"


def write_dataset(path, X, y=None, schema=None, columns=None, generator=None, seed=None, level_names=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise SchemaError("dataset features must be a 2-D array")
    M = X.shape[1]
    schema = schema or FeatureSchema.continuous(M)
    columns = list(columns) if columns else [f"x{j + 1}" for j in range(M)]
    header = columns + (["y"] if y is not None else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(X.shape[0]):
            row = []
            for j in range(M):
                if schema.levels[j]:
                    lab = int(X[i, j])
                    row.append(level_names[j][lab - 1] if level_names and level_names[j] else str(lab))
                else:
                    row.append(_fmt(X[i, j]))
            if y is not None:
                row.append(_fmt(y[i]))
            w.writerow(row)
    meta = {
        "columns": [
            {"name": c, "kind": "categorical" if L else "continuous", "levels": L,
             "level_names": (level_names[j] if level_names and level_names[j] else None)}
            for j, (c, L) in enumerate(zip(columns, schema.levels))
        ],
        "response": "y" if y is not None else None,
        "n_rows": int(X.shape[0]),
        "generator": generator,
        "seed": seed,
    }
    with open(sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_dataset(path, response=None):
    """Return ``(X, y, schema, meta)``.

    Without a sidecar, numeric columns are continuous and any column holding
    a non-numeric entry is categorical with its sorted observed values as
    levels. ``response`` names the response column (default ``y`` if present).
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    meta = None
    if os.path.exists(sidecar_path(path)):
        with open(sidecar_path(path)) as fh:
            meta = json.load(fh)
    if meta is not None:
        resp = meta.get("response") if response is None else response
        feats = [c["name"] for c in meta["columns"]]
        missing = [c for c in feats + ([resp] if resp else []) if c not in header]
        if missing:
            raise SchemaError(f"{path}: columns {missing} named in the schema sidecar are absent")
        levels = [c["levels"] for c in meta["columns"]]
        names = [c.get("level_names") for c in meta["columns"]]
    else:
        resp = response if response is not None else ("y" if "y" in header else None)
        feats = [c for c in header if c != resp]
        levels, names = [], []
        for c in feats:
            k = header.index(c)
            vals = [r[k] for r in body]
            if all(_is_number(v) for v in vals):
                levels.append(0)
                names.append(None)
            else:
                lv = sorted(set(vals))
                if len(lv) < 2:
                    raise SchemaError(f"{path}: categorical column {c!r} has fewer than two levels")
                levels.append(len(lv))
                names.append(lv)
        meta = {"columns": [{"name": c, "kind": "categorical" if L else "continuous", "levels": L,
                             "level_names": n} for c, L, n in zip(feats, levels, names)],
                "response": resp, "generator": None, "seed": None}
    schema = FeatureSchema(tuple(levels))
    X = np.empty((len(body), len(feats)))
    for j, c in enumerate(feats):
        k = header.index(c)
        for i, r in enumerate(body):
            v = r[k]
            if names[j]:
                if v not in names[j]:
                    raise SchemaError(f"{path}: value {v!r} of column {c!r} is not a known level")
                X[i, j] = names[j].index(v) + 1
            else:
                try:
                    X[i, j] = float(v)
                except ValueError:
                    raise SchemaError(f"{path}: column {c!r} row {i + 1} holds non-numeric {v!r}") from None
    y = None
    if resp is not None:
        k = header.index(resp)
        y = np.array([float(r[k]) for r in body])
    if X.shape[0]:
        schema.validate(X)
    return X, y, schema, meta
