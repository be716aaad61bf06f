import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaeacshap import kernels, predictors
from vaeacshap._kernels_py import best_split_sorted as py_split
from vaeacshap._kernels_py import forest_predict as py_predict
from vaeacshap.vaeac import FeatureSchema


def _data(rng, n=200):
    X = np.column_stack([rng.standard_normal(n), rng.integers(1, 4, n), rng.standard_normal(n)]).astype(float)
    y = 2 * X[:, 0] + np.array([0.0, 1.0, -1.0])[X[:, 1].astype(int) - 1] + 0.1 * rng.standard_normal(n)
    return X, y, FeatureSchema((0, 3, 0))


class TestLinear:
    def test_recovers_coefficients(self, rng):
        X, y, schema = _data(rng, 2000)
        m = predictors.fit_linear(X, y, schema)
        assert m.gamma[0] == pytest.approx(2.0, abs=0.02)
        assert m.beta[1][0] == 0.0
        assert m.beta[1][1:] == pytest.approx([1.0, -1.0], abs=0.03)
        assert abs(m.gamma[2]) < 0.02

    def test_collinear_named(self, rng):
        x = rng.standard_normal(50)
        with pytest.raises(predictors.EstimationError, match="x2"):
            predictors.fit_linear(np.column_stack([x, 2 * x]), x, FeatureSchema((0, 0)))

    def test_unknown_level(self, rng):
        X, y, schema = _data(rng)
        m = predictors.fit_linear(X, y, schema)
        with pytest.raises(predictors.PredictionError, match="feature 2"):
            m.predict(np.array([[0.0, 4.0, 0.0]]))

    def test_round_trip(self, rng, tmp_path):
        X, y, schema = _data(rng)
        m = predictors.fit_linear(X, y, schema)
        m.save(tmp_path / "m.bin")
        assert np.array_equal(predictors.load_model(tmp_path / "m.bin").predict(X), m.predict(X))


class TestForest:
    def test_fits_signal(self, rng):
        X, y, schema = _data(rng, 600)
        m = predictors.fit_forest(X, y, schema, n_trees=50, rng=np.random.default_rng(0))
        Xt, yt, _ = _data(np.random.default_rng(9), 300)
        assert np.mean((m.predict(Xt) - yt) ** 2) < 0.3 * np.var(yt)

    def test_row_order_irrelevant(self, rng):
        X, y, schema = _data(rng)
        perm = rng.permutation(X.shape[0])
        a = predictors.fit_forest(X, y, schema, n_trees=10, rng=np.random.default_rng(5))
        b = predictors.fit_forest(X[perm], y[perm], schema, n_trees=10, rng=np.random.default_rng(5))
        assert np.array_equal(a.predict(X), b.predict(X))

    def test_min_leaf_respected(self, rng):
        X, y, schema = _data(rng)
        m = predictors.fit_forest(X, y, schema, n_trees=1, min_leaf=20, rng=np.random.default_rng(1))
        # leaves of a tree with min_leaf 20 on 200 bootstrap rows: at most 10
        assert np.sum(m.feature == -1) <= 10

    def test_round_trip(self, rng, tmp_path):
        X, y, schema = _data(rng)
        m = predictors.fit_forest(X, y, schema, n_trees=5, rng=np.random.default_rng(1))
        m.save(tmp_path / "f.bin")
        assert np.array_equal(predictors.load_model(tmp_path / "f.bin").predict(X), m.predict(X))

    def test_oob(self, rng):
        X, y, schema = _data(rng)
        m = predictors.fit_forest(X, y, schema, n_trees=30, rng=np.random.default_rng(1), compute_oob=True)
        ok = np.isfinite(m.oob_prediction)
        assert ok.mean() > 0.95
        assert np.corrcoef(m.oob_prediction[ok], y[ok])[0, 1] > 0.8

    def test_wrong_width(self, rng):
        X, y, schema = _data(rng)
        m = predictors.fit_forest(X, y, schema, n_trees=2, rng=np.random.default_rng(1))
        with pytest.raises(predictors.PredictionError):
            m.predict(np.zeros((1, 2)))


class TestKernels:
    def test_backends_agree_on_forest(self, rng):
        X, y, schema = _data(rng)
        m = predictors.fit_forest(X, y, schema, n_trees=20, rng=np.random.default_rng(2))
        parts = (m.feature, m.threshold, m.kind, m.left, m.right, m.value, m.roots)
        a = kernels.forest_predict(X, *parts)
        b = py_predict(X, *parts)
        assert np.allclose(a, b, rtol=0, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=4, max_size=40), st.integers(1, 4), st.data())
    def test_backends_agree_on_split(self, xs, min_leaf, data):
        xs = np.sort(np.array(xs))
        ys = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=xs.size, max_size=xs.size)))
        a = kernels.best_split_sorted(xs, ys, min_leaf)
        b = py_split(xs, ys, min_leaf)
        assert a[0] == b[0]
        assert a[1] == pytest.approx(b[1], rel=1e-9, abs=1e-9)

    def test_split_oracle(self):
        # brute-force SSE reduction over valid cut points
        r = np.random.default_rng(4)
        xs = np.sort(r.standard_normal(30))
        ys = np.where(xs > 0.2, 3.0, 0.0) + 0.01 * r.standard_normal(30)
        pos, gain = kernels.best_split_sorted(xs, ys, 2)
        best = max(((ys[:k].sum() ** 2 / k + ys[k:].sum() ** 2 / (30 - k) - ys.sum() ** 2 / 30, k)
                    for k in range(2, 29) if xs[k - 1] < xs[k]))
        assert pos == best[1] and gain == pytest.approx(best[0])

    def test_backend_name(self):
        assert kernels.BACKEND in ("cython", "python")


class TestConstant:
    def test_round_trip(self, tmp_path):
        m = predictors.ConstantModel(3.0, FeatureSchema((0, 2)))
        m.save(tmp_path / "c.bin")
        back = predictors.load_model(tmp_path / "c.bin")
        assert back.predict(np.zeros((4, 2))).tolist() == [3.0] * 4
        assert back.schema.levels == (0, 2)
