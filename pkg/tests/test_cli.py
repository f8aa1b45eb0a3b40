"""End-to-end tests of the command-line interface."""

import json

import pytest

from molview.cli import main
from molview.molio import load_dataset


TINY = {
    "batch_size": 4,
    "epochs": 1,
    "gin": {"num_layers": 1, "hidden_dim": 8},
    "schnet": {"num_layers": 1, "hidden_dim": 8},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture
def dataset_file(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--count", "20", "--min-atoms", "4", "--max-atoms", "8", "--seed", "2",
                 "--out", str(out)]) == 0
    return out / "dataset.jsonl"


class TestSynth:
    def test_writes_dataset(self, dataset_file):
        dataset = load_dataset(dataset_file)
        assert len(dataset.records) == 20
        assert "diameter_edges" in dataset.header


class TestPretrain:
    def test_outputs(self, tmp_path, config_file, dataset_file):
        out = tmp_path / "run1"
        code = main(["pretrain", "--config", str(config_file), "--dataset", str(dataset_file), "--out", str(out)])
        assert code == 0
        assert (out / "model.gmvp").is_file()
        lines = (out / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 5
        assert set(json.loads(lines[0])) == {"step", "loss", "terms", "secs"}

    def test_byte_deterministic(self, tmp_path, config_file, dataset_file):
        for name in ("a", "b"):
            args = ["pretrain", "--config", str(config_file), "--dataset", str(dataset_file),
                    "--seed", "5", "--loss", "infonce", "--out", str(tmp_path / name)]
            assert main(args) == 0
        for artifact in ("metrics.jsonl", "model.gmvp"):
            assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()

    def test_missing_config(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        assert main(["pretrain", "--config", str(missing), "--out", str(tmp_path / "run")]) == 2
        err = capsys.readouterr().err.strip()
        assert str(missing) in err
        assert len(err.splitlines()) == 1

    def test_invalid_config(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"batch_size": 1}))
        assert main(["pretrain", "--config", str(path), "--out", str(tmp_path / "run")]) == 2

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["pretrain", "--bogus"])
        assert exc.value.code == 2
        assert capsys.readouterr().err.startswith("Error:")


class TestEvaluation:
    def test_probe_report(self, tmp_path, config_file, dataset_file):
        out = tmp_path / "eval"
        code = main(["probe", "--config", str(config_file), "--dataset", str(dataset_file),
                     "--task", "multiclass", "--target", "diameter", "--out", str(out)])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["metric"] == "accuracy"
        assert {"task", "metric", "value", "seeds"} <= set(report)

    def test_finetune_from_checkpoint(self, tmp_path, config_file, dataset_file):
        run = tmp_path / "run"
        assert main(["pretrain", "--config", str(config_file), "--dataset", str(dataset_file),
                     "--out", str(run)]) == 0
        out = tmp_path / "eval"
        code = main(["finetune", "--checkpoint", str(run / "model.gmvp"), "--dataset", str(dataset_file),
                     "--task", "regression", "--target", "diameter_3d", "--out", str(out)])
        assert code == 0
        assert json.loads((out / "report.json").read_text())["metric"] == "rmse"

    def test_missing_label_is_runtime_failure(self, tmp_path, config_file, dataset_file):
        code = main(["probe", "--config", str(config_file), "--dataset", str(dataset_file),
                     "--target", "solubility", "--out", str(tmp_path / "eval")])
        assert code == 1

    def test_gradcheck(self, capsys):
        assert main(["gradcheck", "--loss", "vrr", "--seed", "7"]) == 0
        assert "max relative error" in capsys.readouterr().out

    def test_mi_bench(self, tmp_path):
        out = tmp_path / "mi"
        assert main(["mi-bench", "--rho", "0.5", "--steps", "10", "--batch-size", "16", "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["metric"] == "mi_nats"
