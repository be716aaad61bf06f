"""Black-box regression models to be explained.

Both models take raw feature matrices (categorical labels ``1..L`` as floats)
and expose ``predict(X) -> (n,)``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels, serialize
from . import rng as rngmod
from .vaeac import FeatureSchema


class EstimationError(ValueError):
    """Design matrix is rank deficient."""


class PredictionError(ValueError):
    """Input row is outside what the model was fitted on."""


@dataclass
class LinearModel:
    """``alpha + sum_j beta_j[x_j] + sum_j gamma_j x_j``.

    ``beta[j]`` is a length-``L`` vector over the levels of categorical feature
    ``j``; ``gamma[j]`` is the slope of continuous feature ``j``. Features of
    the other kind hold zeros.
    """

    schema: FeatureSchema
    alpha: float
    beta: list
    gamma: np.ndarray

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.full(X.shape[0], float(self.alpha))
        for j, L in enumerate(self.schema.levels):
            col = X[:, j]
            if L:
                lab = col.astype(np.int64)
                bad = (lab != col) | (lab < 1) | (lab > L)
                if np.any(bad):
                    raise PredictionError(f"feature {j + 1}: level {col[bad][0]!r} not in 1..{L}")
                out += np.asarray(self.beta[j])[lab - 1]
            else:
                out += self.gamma[j] * col
        return out

    def save(self, path):
        arrays = {"alpha": np.array([self.alpha]), "gamma": self.gamma}
        for j in self.schema.categorical:
            arrays[f"beta_{j}"] = np.asarray(self.beta[j])
        serialize.write_container(path, "linear", {"levels": list(self.schema.levels)}, arrays)

    @classmethod
    def from_container(cls, header, arrays):
        schema = FeatureSchema(tuple(header["levels"]))
        beta = [arrays[f"beta_{j}"] if L else np.zeros(0) for j, L in enumerate(schema.levels)]
        return cls(schema, float(arrays["alpha"][0]), beta, arrays["gamma"])


def linear_design(X, schema):
    """Design matrix with a dropped reference level (level 1) per categorical feature."""
    X = schema.validate(X)
    cols, names = [np.ones(X.shape[0])], ["intercept"]
    for j, L in enumerate(schema.levels):
        if L:
            for lev in range(2, L + 1):
                cols.append((X[:, j] == lev).astype(np.float64))
                names.append(f"x{j + 1}=={lev}")
        else:
            cols.append(X[:, j])
            names.append(f"x{j + 1}")
    return np.column_stack(cols), names


def fit_linear(X, y, schema):
    """Ordinary least squares through a QR factorization."""
    D, names = linear_design(X, schema)
    y = np.asarray(y, dtype=np.float64)
    if D.shape[0] < D.shape[1]:
        raise EstimationError(f"{D.shape[0]} rows cannot identify {D.shape[1]} coefficients")
    Q, R = np.linalg.qr(D)
    diag = np.abs(np.diag(R))
    tol = diag.max() * max(D.shape) * np.finfo(float).eps * 1e3
    if np.any(diag <= tol):
        bad = [names[k] for k in np.flatnonzero(diag <= tol)]
        raise EstimationError(f"design columns {bad} are collinear with earlier columns")
    coef = solve_triangular(R, Q.T @ y)
    alpha, pos = float(coef[0]), 1
    beta, gamma = [], np.zeros(schema.M)
    for j, L in enumerate(schema.levels):
        if L:
            beta.append(np.concatenate([[0.0], coef[pos:pos + L - 1]]))
            pos += L - 1
        else:
            beta.append(np.zeros(0))
            gamma[j] = coef[pos]
            pos += 1
    return LinearModel(schema, alpha, beta, gamma)


@dataclass
class ForestModel:
    """Flattened trees. Leaves have ``feature == -1``.

    ``kind`` 0 sends ``x <= threshold`` left; ``kind`` 1 sends
    ``x == threshold`` left (one categorical level against the rest).
    """

    schema: FeatureSchema
    feature: np.ndarray
    threshold: np.ndarray
    kind: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    oob_prediction: np.ndarray = None

    @property
    def n_trees(self):
        return self.roots.size

    def predict(self, X):
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        if X.shape[1] != self.schema.M:
            raise PredictionError(f"expected {self.schema.M} columns, got {X.shape[1]}")
        for j in self.schema.categorical:
            col = X[:, j]
            bad = (col != np.round(col)) | (col < 1) | (col > self.schema.levels[j])
            if np.any(bad):
                raise PredictionError(f"feature {j + 1}: level {col[bad][0]!r} not in 1..{self.schema.levels[j]}")
        return kernels.forest_predict(X, self.feature, self.threshold, self.kind,
                                      self.left, self.right, self.value, self.roots)

    def save(self, path):
        arrays = {k: getattr(self, k).astype(np.float64)
                  for k in ("feature", "threshold", "kind", "left", "right", "value", "roots")}
        serialize.write_container(path, "forest", {"levels": list(self.schema.levels)}, arrays)

    @classmethod
    def from_container(cls, header, arrays):
        ints = {k: np.ascontiguousarray(arrays[k], dtype=np.int32)
                for k in ("feature", "left", "right", "roots")}
        return cls(FeatureSchema(tuple(header["levels"])), ints["feature"],
                   np.ascontiguousarray(arrays["threshold"]),
                   np.ascontiguousarray(arrays["kind"], dtype=np.int8),
                   ints["left"], ints["right"], np.ascontiguousarray(arrays["value"]), ints["roots"])


class _TreeBuilder:
    def __init__(self, X, y, schema, min_leaf, mtry):
        self.X, self.y, self.schema = X, y, schema
        self.min_leaf, self.mtry = min_leaf, mtry
        self.feature, self.threshold, self.kind = [], [], []
        self.left, self.right, self.value = [], [], []

    def _new(self, value):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.kind.append(0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def _best_split(self, idx, rng):
        ys = self.y[idx]
        n = idx.size
        best = (0.0, -1, 0.0, 0, None)
        feats = rng.choice(self.schema.M, size=self.mtry, replace=False)
        total = ys.sum()
        base = total * total / n
        for f in feats:
            xs = self.X[idx, f]
            L = self.schema.levels[f]
            if L:
                lab = xs.astype(np.int64) - 1
                cnt = np.bincount(lab, minlength=L)
                sums = np.bincount(lab, weights=ys, minlength=L)
                for lev in range(L):
                    nl, nr = cnt[lev], n - cnt[lev]
                    if nl < self.min_leaf or nr < self.min_leaf:
                        continue
                    sr = total - sums[lev]
                    gain = sums[lev] ** 2 / nl + sr**2 / nr - base
                    if gain > best[0]:
                        best = (gain, f, float(lev + 1), 1, xs == lev + 1)
            else:
                order = np.argsort(xs, kind="stable")
                xo = np.ascontiguousarray(xs[order])
                pos, gain = kernels.best_split_sorted(xo, np.ascontiguousarray(ys[order]), self.min_leaf)
                if pos > 0 and gain > best[0]:
                    thr = 0.5 * (xo[pos - 1] + xo[pos])
                    if not xo[pos - 1] <= thr < xo[pos]:
                        thr = xo[pos - 1]
                    best = (gain, f, thr, 0, xs <= thr)
        return best

    def build(self, idx, rng):
        node = self._new(float(self.y[idx].mean()))
        if idx.size < 2 * self.min_leaf or np.all(self.y[idx] == self.y[idx[0]]):
            return node
        gain, f, thr, kind, go_left = self._best_split(idx, rng)
        if f < 0:
            return node
        self.feature[node], self.threshold[node], self.kind[node] = int(f), thr, kind
        self.left[node] = self.build(idx[go_left], rng)
        self.right[node] = self.build(idx[~go_left], rng)
        return node


def fit_forest(X, y, schema, n_trees=500, min_leaf=5, mtry=None, rng=None, compute_oob=False):
    """Bagged CART regression trees with random feature subsets per split.

    Rows are put in a canonical order first, so the fitted forest depends on
    the multiset of training rows and the seed, not on their order.
    """
    X = schema.validate(X)
    y = np.asarray(y, dtype=np.float64)
    N, M = X.shape
    if N < 2 * min_leaf:
        raise ValueError(f"need at least {2 * min_leaf} rows, got {N}")
    if rng is None:
        raise ValueError("fit_forest needs an explicit random generator")
    mtry = max(1, math.ceil(M / 3)) if mtry is None else int(mtry)
    canon = np.lexsort(np.column_stack([X, y]).T[::-1])
    X, y = np.ascontiguousarray(X[canon]), y[canon]
    base = int(rng.integers(0, 2**62))
    builder = _TreeBuilder(X, y, schema, int(min_leaf), min(mtry, M))
    roots = []
    oob_sum, oob_n = np.zeros(N), np.zeros(N)
    for t in range(int(n_trees)):
        tr = rngmod.stream(base, t)
        boot = np.sort(tr.integers(0, N, size=N))
        roots.append(builder.build(boot, tr))
        if compute_oob:
            out = np.ones(N, dtype=bool)
            out[boot] = False
            if out.any():
                single = _flatten(builder, [roots[-1]], schema)
                oob_sum[out] += single.predict(X[out])
                oob_n[out] += 1
    model = _flatten(builder, roots, schema)
    if compute_oob:
        pred = np.full(N, np.nan)
        ok = oob_n > 0
        pred[ok] = oob_sum[ok] / oob_n[ok]
        inverse = np.empty(N, dtype=np.int64)
        inverse[canon] = np.arange(N)
        model.oob_prediction = pred[inverse]
    return model


def _flatten(b, roots, schema):
    return ForestModel(
        schema,
        np.array(b.feature, dtype=np.int32),
        np.array(b.threshold, dtype=np.float64),
        np.array(b.kind, dtype=np.int8),
        np.array(b.left, dtype=np.int32),
        np.array(b.right, dtype=np.int32),
        np.array(b.value, dtype=np.float64),
        np.array(roots, dtype=np.int32),
    )


class ConstantModel:
    """Predicts the same value everywhere."""

    def __init__(self, c, schema=None):
        self.c = float(c)
        self.schema = schema

    def predict(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.c)

    def save(self, path):
        levels = None if self.schema is None else list(self.schema.levels)
        serialize.write_container(path, "constant", {"levels": levels}, {"c": np.array([self.c])})

    @classmethod
    def from_container(cls, header, arrays):
        schema = None if header["levels"] is None else FeatureSchema(tuple(header["levels"]))
        return cls(float(arrays["c"][0]), schema)


def load_model(path):
    kind, header, arrays = serialize.read_container(path)
    if kind == "linear":
        return LinearModel.from_container(header, arrays)
    if kind == "forest":
        return ForestModel.from_container(header, arrays)
    if kind == "constant":
        return ConstantModel.from_container(header, arrays)
    raise serialize.FormatError(f"{path}: {kind!r} is not a predictive model")
