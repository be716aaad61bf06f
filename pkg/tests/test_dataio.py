import numpy as np
import pytest

from vaeacshap import dataio
from vaeacshap.vaeac import FeatureSchema, SchemaError


class TestDataset:
    def test_round_trip_exact(self, tmp_path, rng):
        X = np.column_stack([rng.standard_normal(5), rng.integers(1, 4, 5)]).astype(float)
        y = rng.standard_normal(5)
        p = tmp_path / "d.csv"
        dataio.write_dataset(p, X, y, FeatureSchema((0, 3)), seed=3)
        X2, y2, schema, meta = dataio.read_dataset(p)
        assert np.array_equal(X, X2) and np.array_equal(y, y2)
        assert schema.levels == (0, 3) and meta["seed"] == 3

    def test_inferred_schema(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,y\n1.5,red,0\n2.5,blue,1\n0.5,red,2\n")
        X, y, schema, _ = dataio.read_dataset(p)
        assert schema.levels == (0, 2)
        assert X[:, 1].tolist() == [2.0, 1.0, 2.0]  # sorted levels: blue, red
        assert y.tolist() == [0.0, 1.0, 2.0]

    def test_level_names_written(self, tmp_path):
        p = tmp_path / "d.csv"
        dataio.write_dataset(p, np.array([[1.0], [2.0]]), None, FeatureSchema((2,)), level_names=[["lo", "hi"]])
        assert p.read_text().splitlines()[1:] == ["lo", "hi"]
        X, _, _, _ = dataio.read_dataset(p)
        assert X[:, 0].tolist() == [1.0, 2.0]

    def test_unknown_level(self, tmp_path):
        p = tmp_path / "d.csv"
        dataio.write_dataset(p, np.array([[1.0]]), None, FeatureSchema((2,)), level_names=[["lo", "hi"]])
        p.write_text("x1\nmid\n")
        with pytest.raises(SchemaError, match="mid"):
            dataio.read_dataset(p)

    def test_missing_column(self, tmp_path):
        p = tmp_path / "d.csv"
        dataio.write_dataset(p, np.zeros((1, 2)), None)
        p.write_text("x1\n0\n")
        with pytest.raises(SchemaError, match="x2"):
            dataio.read_dataset(p)

    def test_empty_rows(self, tmp_path):
        p = tmp_path / "d.csv"
        dataio.write_dataset(p, np.zeros((0, 3)), np.zeros(0))
        X, y, schema, _ = dataio.read_dataset(p)
        assert X.shape == (0, 3) and y.shape == (0,) and schema.M == 3
