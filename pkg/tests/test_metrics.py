import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vaeacshap import metrics


class TestCriteria:
    def test_ec1_hand_value(self):
        t = np.array([[1.0, 2.0], [0.0, 0.0]])
        e = np.array([[1.5, 2.0], [1.0, -1.0]])
        # instance errors 0.25 and 1.0
        assert metrics.ec1(t, e) == pytest.approx(0.625)

    def test_ec2_ec3_hand_values(self):
        vt = np.array([[1.0, 2.0]])
        vh = np.array([[2.0, 2.0]])
        assert metrics.ec2(vt, vh) == pytest.approx(0.5)
        assert metrics.ec2(vt, vh, counts=[3, 1]) == pytest.approx(0.75)
        assert metrics.ec3(np.array([2.0]), vt) == pytest.approx(0.5)

    def test_weighted_ec1(self):
        t, e = np.zeros((2, 2)), np.array([[1.0, 1.0], [3.0, 3.0]])
        assert metrics.ec1_weighted(t, e, [3, 1]) == pytest.approx(1.5)
        with pytest.raises(metrics.InputError):
            metrics.ec1_weighted(t, e, [-1, 2])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)))
    def test_zero_at_truth(self, v):
        assert metrics.ec1(v, v) == 0.0 and metrics.ec2(v, v) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(metrics.InputError):
            metrics.ec1(np.zeros((2, 3)), np.zeros((2, 2)))

    def test_gaps(self):
        with pytest.raises(metrics.InputError):
            metrics.ec3(np.zeros(1), np.array([[np.nan, 1.0]]))


class TestReports:
    def test_csv_and_aggregate(self, tmp_path):
        rs = [metrics.EvalReport("a", 0, ec1=1.0, ec3=2.0, K=5), metrics.EvalReport("a", 1, ec1=3.0, ec3=4.0, K=5)]
        metrics.write_reports_csv(tmp_path / "r.csv", rs)
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == ",".join(metrics.CSV_FIELDS)
        assert lines[1].startswith("a,0,5,1,,2,")
        agg = metrics.aggregate(rs)
        assert agg["a"] == {"ec1": 2.0, "ec2": None, "ec3": 3.0, "repetitions": 2}
