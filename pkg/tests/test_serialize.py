import numpy as np
import pytest

from vaeacshap import serialize


class TestContainer:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "c.bin"
        arrays = {"b": np.arange(6.0).reshape(2, 3), "a": np.array([1.5])}
        serialize.write_container(p, "thing", {"x": 1}, arrays)
        kind, header, back = serialize.read_container(p, "thing")
        assert kind == "thing" and header == {"x": 1}
        for k in arrays:
            assert np.array_equal(back[k], arrays[k])
        assert serialize.peek_kind(p) == "thing"

    def test_identical_content_identical_bytes(self, tmp_path):
        a = {"z": np.ones(3), "y": np.zeros(2)}
        serialize.write_container(tmp_path / "1", "k", {"b": 1, "a": 2}, a)
        serialize.write_container(tmp_path / "2", "k", {"a": 2, "b": 1}, dict(reversed(list(a.items()))))
        assert (tmp_path / "1").read_bytes() == (tmp_path / "2").read_bytes()

    def test_wrong_kind(self, tmp_path):
        serialize.write_container(tmp_path / "c", "forest", {}, {})
        with pytest.raises(serialize.FormatError, match="expected 'linear'"):
            serialize.read_container(tmp_path / "c", "linear")

    def test_not_a_container(self, tmp_path):
        (tmp_path / "junk").write_bytes(b"hello\n")
        with pytest.raises(serialize.FormatError):
            serialize.read_container(tmp_path / "junk")

    def test_truncated(self, tmp_path):
        p = tmp_path / "c"
        serialize.write_container(p, "k", {}, {"a": np.arange(10.0)})
        p.write_bytes(p.read_bytes()[:-16])
        with pytest.raises(serialize.FormatError, match="truncated"):
            serialize.read_container(p)
