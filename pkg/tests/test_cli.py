import json

import pandas as pd
import pytest
from click.testing import CliRunner

from mambular.checkpoint import load_checkpoint
from mambular.cli import build_run_config, cli, main
from mambular.reports import validate_report


@pytest.fixture
def runner():
    return CliRunner()


def run_args(files, out, *extra):
    return [
        "--config", str(files["config"]),
        "--schema", str(files["schema"]),
        "--data", str(files["data"]),
        "--folds", "2",
        "--out", str(out),
        *extra,
    ]


class TestBuildRunConfig:
    def test_flags_override_file(self, dataset_files):
        run = build_run_config(str(dataset_files["config"]), d=16, epochs=5, arch=None, bidirectional=True)
        assert run.model.d == 16
        assert run.train.max_epochs == 5
        assert run.model.layers == 1
        assert run.model.bidirectional

    def test_kernel_j_left_for_the_dataset(self, dataset_files):
        run = build_run_config(str(dataset_files["config"]), kernel="J")
        assert run.model.kernel == 2

    def test_defaults_without_file(self):
        run = build_run_config(None, lr=0.5)
        assert run.train.lr == 0.5
        assert run.model.d == 64


class TestSynthCommand:
    def test_writes_data_schema_and_truth(self, runner, tmp_path):
        out = tmp_path / "synth"
        result = runner.invoke(cli, ["synth", "--seed", "3", "--rows", "200", "--out", str(out)])
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(out / "data.csv")
        assert len(frame) == 200
        assert json.loads((out / "truth.json").read_text())["seed"] == 3
        schema = json.loads((out / "schema.json").read_text())
        assert len(schema["columns"]) == 10


class TestTrainCommand:
    def test_train_and_predict(self, runner, dataset_files, tmp_path):
        out = tmp_path / "run"
        result = runner.invoke(cli, ["train", *run_args(dataset_files, out)])
        assert result.exit_code == 0, result.output
        for name in ("history.csv", "checkpoint.bin", "metrics.json", "config.json"):
            assert (out / name).exists(), name
        metrics = json.loads((out / "metrics.json").read_text())
        assert set(metrics["test"]) == {"mse"}
        assert len(pd.read_csv(out / "history.csv")) <= 2

        model, _ = load_checkpoint(str(out / "checkpoint.bin"))
        assert model.config.d == 8

        features = pd.read_csv(dataset_files["data"]).drop(columns=["y"])
        features.to_csv(tmp_path / "new.csv", index=False)
        predictions = tmp_path / "predictions.csv"
        result = runner.invoke(
            cli,
            ["predict", "--checkpoint", str(out / "checkpoint.bin"), "--data", str(tmp_path / "new.csv"),
             "--out", str(predictions), "--original-scale"],
        )
        assert result.exit_code == 0, result.output
        assert len(pd.read_csv(predictions)) == len(features)

    def test_missing_schema_file_exits_2(self, runner, dataset_files, tmp_path):
        args = run_args(dataset_files, tmp_path / "run")
        args[args.index("--schema") + 1] = str(tmp_path / "nope.json")
        result = runner.invoke(cli, ["train", *args])
        assert result.exit_code == 2
        assert "Schema file not found" in result.output

    def test_invalid_config_exits_2(self, runner, dataset_files, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"pooling": "median"}))
        args = run_args(dataset_files, tmp_path / "run")
        args[args.index("--config") + 1] = str(bad)
        result = runner.invoke(cli, ["train", *args])
        assert result.exit_code == 2
        assert "pooling" in result.output

    def test_unparsable_data_exits_1(self, runner, dataset_files, tmp_path):
        frame = pd.read_csv(dataset_files["data"])
        frame["x1"] = frame["x1"].astype(str)
        frame.loc[3, "x1"] = "oops"
        frame.to_csv(dataset_files["data"], index=False)
        result = runner.invoke(cli, ["train", *run_args(dataset_files, tmp_path / "run")])
        assert result.exit_code == 1
        assert "oops" in result.output


class TestCvAndCompare:
    def test_cv_then_compare(self, runner, dataset_files, tmp_path):
        out = tmp_path / "cv"
        result = runner.invoke(cli, ["cv", *run_args(dataset_files, out), "--baseline"])
        assert result.exit_code == 0, result.output
        folds = pd.read_csv(out / "folds.csv")
        assert set(folds["model"]) == {"mambular", "linear"}
        assert len(folds) == 4
        assert len(pd.read_parquet(out / "predictions.parquet")) == 240
        aggregate = json.loads((out / "aggregate.json").read_text())
        assert validate_report(aggregate) == []

        result = runner.invoke(cli, ["compare", str(out), "--model-b", "linear", "--q", "0.1"])
        assert result.exit_code == 0, result.output
        comparison = json.loads((out / "comparison.json").read_text())
        assert comparison["model_a"] == "mambular" and comparison["q_levels"] == [0.1]
        assert (out / "significance.csv").exists()

    def test_same_seed_writes_identical_folds(self, runner, dataset_files, tmp_path):
        outputs = [tmp_path / "first", tmp_path / "second"]
        for out in outputs:
            result = runner.invoke(cli, ["cv", *run_args(dataset_files, out, "--seed", "4")])
            assert result.exit_code == 0, result.output
        first, second = ((out / "folds.csv").read_bytes() for out in outputs)
        assert first == second

    def test_compare_identical_directories(self, runner, dataset_files, tmp_path):
        out = tmp_path / "cv"
        assert runner.invoke(cli, ["cv", *run_args(dataset_files, out)]).exit_code == 0
        result = runner.invoke(cli, ["compare", str(out), str(out), "--out", str(tmp_path / "cmp")])
        assert result.exit_code == 0, result.output
        rows = json.loads((tmp_path / "cmp" / "comparison.json").read_text())["rows"]
        assert [r["p"] for r in rows] == [1.0]
        assert "no datasets" in result.output

    def test_compare_missing_results(self, runner, tmp_path):
        result = runner.invoke(cli, ["compare", str(tmp_path)])
        assert result.exit_code == 1
        assert "not found" in result.output


class TestAblationCommands:
    def test_ordering_without_shuffles(self, runner, dataset_files, tmp_path):
        out = tmp_path / "ablation"
        result = runner.invoke(cli, ["ablate-ordering", *run_args(dataset_files, out), "--shuffles", "0"])
        assert result.exit_code == 0, result.output
        report = json.loads((out / "ablation.json").read_text())
        assert [e["variant"] for e in report["entries"]] == ["default", "cat-num", "flipped"]
        assert report["mode"] == "before-embedding"
        assert validate_report(report) == []

    def test_kernel_j_spans_all_features(self, runner, dataset_files, tmp_path):
        out = tmp_path / "wide"
        result = runner.invoke(
            cli, ["ablate-ordering", *run_args(dataset_files, out, "--kernel", "J"), "--shuffles", "0"]
        )
        assert result.exit_code == 0, result.output
        assert json.loads((out / "ablation.json").read_text())["kernel"] == 3

    def test_kernel_rejects_other_words(self, runner, dataset_files, tmp_path):
        result = runner.invoke(cli, ["ablate-ordering", *run_args(dataset_files, tmp_path, "--kernel", "wide")])
        assert result.exit_code == 2
        assert "neither an integer nor J" in result.output

    def test_negative_shuffles(self, runner, dataset_files, tmp_path):
        result = runner.invoke(cli, ["ablate-ordering", *run_args(dataset_files, tmp_path), "--shuffles", "-1"])
        assert result.exit_code == 2

    def test_architecture_variants(self, runner, dataset_files, tmp_path):
        out = tmp_path / "arch"
        result = runner.invoke(
            cli, ["ablate-architecture", *run_args(dataset_files, out), "--variant", "sum", "--variant", "bidirectional"]
        )
        assert result.exit_code == 0, result.output
        report = json.loads((out / "ablation.json").read_text())
        assert {e["variant"] for e in report["entries"]} == {"default", "sum", "bidirectional"}

    def test_unknown_variant(self, runner, dataset_files, tmp_path):
        result = runner.invoke(cli, ["ablate-architecture", *run_args(dataset_files, tmp_path), "--variant", "lstm"])
        assert result.exit_code == 2
        assert "Unknown variant" in result.output


class TestMain:
    def test_returns_exit_code(self, tmp_path):
        assert main(["synth", "--rows", "50", "--out", str(tmp_path / "s")]) == 0
        assert main(["compare", str(tmp_path / "missing")]) == 1

    def test_usage_error(self):
        assert main(["train", "--pooling", "median"]) == 2
