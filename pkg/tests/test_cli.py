import json

import numpy as np
import pytest

from vaeacshap import cli, dataio


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture
def burr_files(tmp_path):
    assert run("simulate", "--generator", "burr", "--m", 5, "--n", 150, "--seed", 7, "--out", tmp_path / "train.csv") == 0
    assert run("simulate", "--generator", "burr", "--m", 5, "--n", 3, "--seed", 8, "--out", tmp_path / "test.csv") == 0
    assert run("fit-model", "--data", tmp_path / "train.csv", "--trees", 8, "--seed", 1, "--out", tmp_path / "f.bin") == 0
    return tmp_path


class TestSimulate:
    def test_same_seed_same_files(self, tmp_path):
        for d in ("a", "b"):
            (tmp_path / d).mkdir()
            run("simulate", "--generator", "burr", "--m", 5, "--n", 100, "--seed", 7, "--out", tmp_path / d / "x.csv")
        for name in ("x.csv", "x.csv.schema.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_resimulate_from_sidecar(self, tmp_path):
        run("simulate", "--generator", "mixed", "--m", 4, "--n", 40, "--seed", 2, "--out", tmp_path / "a.csv")
        run("simulate", "--from-sidecar", tmp_path / "a.csv.schema.json", "--out", tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_mixed_sidecar_lists_categories(self, tmp_path):
        run("simulate", "--generator", "mixed", "--m", 4, "--n", 10, "--seed", 2, "--out", tmp_path / "a.csv")
        side = json.loads((tmp_path / "a.csv.schema.json").read_text())
        cats = [c for c in side["columns"] if c["kind"] == "categorical"]
        assert len(cats) == 2 and all(c["levels"] == 4 for c in cats)

    def test_zero_rows(self, tmp_path):
        assert run("simulate", "--generator", "burr", "--m", 5, "--n", 0, "--seed", 1, "--out", tmp_path / "e.csv") == 0
        X, y, schema, _ = dataio.read_dataset(tmp_path / "e.csv")
        assert X.shape == (0, 5) and schema.M == 5

    def test_config_file(self, tmp_path):
        (tmp_path / "c.yaml").write_text("generator: {type: categorical, M: 3, L: 3, rho: 0.5}\nn: 20\nseed: 4\n")
        run("simulate", "--config", tmp_path / "c.yaml", "--out", tmp_path / "d.csv")
        _, _, schema, _ = dataio.read_dataset(tmp_path / "d.csv")
        assert schema.levels == (3, 3, 3)


class TestExplain:
    def test_deterministic(self, burr_files):
        t = burr_files
        for out in ("e1.csv", "e2.csv"):
            assert run("explain", "--model", t / "f.bin", "--data", t / "test.csv", "--method", "gaussian",
                       "--train", t / "train.csv", "--k", 30, "--seed", 5, "--out", t / out) == 0
        assert (t / "e1.csv").read_bytes() == (t / "e2.csv").read_bytes()

    def test_conditioner_file_supplies_phi0(self, burr_files, tmp_path):
        t = burr_files
        (tmp_path / "v.yaml").write_text("vaeac: {depth: 2, width: 6, latent_dim: 2, epochs: 2, multistart: 1, warmup_epochs: 1}\n")
        assert run("train-vaeac", "--data", t / "train.csv", "--config", tmp_path / "v.yaml", "--seed", 1,
                   "--coalitions", 12, "--out", t / "v.bin", "--log", t / "log.csv") == 0
        assert run("explain", "--model", t / "f.bin", "--data", t / "test.csv", "--conditioner", t / "v.bin",
                   "--k", 10, "--coalitions", 12, "--out", t / "e.csv") == 0
        _, y, _, _ = dataio.read_dataset(t / "train.csv")
        rows = (t / "e.csv").read_text().splitlines()
        assert float(rows[1].split(",")[1]) == pytest.approx(np.mean(y))

    def test_constant_model_zero_phi(self, burr_files):
        t = burr_files
        run("fit-model", "--data", t / "train.csv", "--model", "constant", "--out", t / "c.bin")
        run("explain", "--model", t / "c.bin", "--data", t / "train.csv", "--method", "independence",
            "--train", t / "train.csv", "--k", 5, "--out", t / "e.csv")
        rows = [r.split(",") for r in (t / "e.csv").read_text().splitlines()[1:]]
        assert all(float(v) == 0.0 for r in rows for v in r[2:-1])

    def test_schema_mismatch(self, burr_files, capsys):
        t = burr_files
        run("simulate", "--generator", "mixed", "--m", 4, "--n", 5, "--seed", 1, "--out", t / "m.csv")
        rc = run("explain", "--model", t / "f.bin", "--data", t / "m.csv", "--method", "independence",
                 "--train", t / "train.csv", "--out", t / "e.csv")
        assert rc == 2 and "features" in capsys.readouterr().err

    def test_needs_source(self, burr_files, capsys):
        t = burr_files
        assert run("explain", "--model", t / "f.bin", "--data", t / "test.csv", "--out", t / "e.csv") == 2
        assert "--conditioner" in capsys.readouterr().err


class TestEvaluate:
    def test_criteria(self, burr_files, capsys):
        t = burr_files
        common = ["--model", t / "f.bin", "--data", t / "test.csv", "--train", t / "train.csv", "--k", 20]
        run("explain", *common, "--method", "independence", "--out", t / "i.csv", "--values", t / "iv.csv")
        run("explain", *common, "--method", "truth", "--out", t / "t.csv", "--values", t / "tv.csv")
        capsys.readouterr()
        assert run("evaluate", "--estimate", t / "i.csv", "--truth", t / "t.csv", "--values", t / "iv.csv",
                   "--truth-values", t / "tv.csv", "--out", t / "ev.json") == 0
        doc = json.loads((t / "ev.json").read_text())
        assert set(doc) == {"ec1", "ec2", "ec3", "n_test"} and doc["n_test"] == 3


class TestRunExperiment:
    def test_flags_override_and_determinism(self, tmp_path):
        (tmp_path / "c.yaml").write_text(
            "generator: {type: burr, M: 5}\npredictor: {type: forest, trees: 5}\n"
            "methods: [truth, gaussian]\nK: 999\nK_true: 30\nn_train: 80\nn_test: 2\nrepetitions: 1\n")
        for d in ("a", "b"):
            assert run("run-experiment", "--config", tmp_path / "c.yaml", "--seed", 4, "--k", 10,
                       "--method", "independence", "--out", tmp_path / d) == 0
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert "explanations_rep0_independence_K10.csv" in files
        for name in files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
