"""Tests for argument parsing, configuration resolution and subcommand exit codes."""

import json
from pathlib import Path

import pandas as pd
import pytest

from bissm.cli import build_parser, main, resolve_config, worker_threads
from bissm.config import Settings
from bissm.core.exceptions import ConfigError
from bissm.models.config import Subcommand
from bissm.persistence.artifacts import RUN_CONFIG_FILE, read_report

SIMULATED_FILES = ("train.csv", "test.csv", "ground_truth.csv", "schema.json")


def _simulate(out: Path, seed: int = 5, *extra: str) -> int:
    return main(["simulate", "--seed", str(seed), "--out", str(out), *extra])


class TestResolveConfig:
    """Tests for merging the config file with command-line flags."""

    def test_flags_override_config_file(self, tmp_path: Path) -> None:
        config_path = tmp_path / "config.json"
        config_path.write_text(
            json.dumps({"seed": 1, "model": {"epochs": 3, "state_dim": 5}, "report_name": "r.txt"})
        )
        args = build_parser().parse_args(
            [
                "train",
                "--config",
                str(config_path),
                "--epochs",
                "7",
                "--train-csv",
                "train.csv",
                "--schema",
                "schema.json",
            ]
        )

        config = resolve_config(args)

        assert config.subcommand is Subcommand.TRAIN
        assert config.seed == 1
        assert config.model.epochs == 7
        assert config.model.state_dim == 5
        assert config.report_name == "r.txt"
        assert config.train_csv == Path("train.csv")

    def test_nested_simulation_flags(self) -> None:
        args = build_parser().parse_args(
            ["simulate", "--seed", "3", "--train-length", "40", "--low-noise"]
        )

        config = resolve_config(args)

        assert config.simulation.train_length == 40
        assert config.simulation.test_length == 10000
        assert config.simulation.low_noise

    def test_missing_config_file(self, tmp_path: Path) -> None:
        args = build_parser().parse_args(
            ["simulate", "--seed", "1", "--config", str(tmp_path / "absent.json")]
        )

        with pytest.raises(ConfigError) as exc_info:
            resolve_config(args)

        assert exc_info.value.code == "CONFIG_NOT_FOUND"

    def test_invalid_value(self) -> None:
        args = build_parser().parse_args(["simulate", "--seed", "1", "--epochs", "0"])

        with pytest.raises(ConfigError) as exc_info:
            resolve_config(args)

        assert exc_info.value.code == "INVALID_CONFIG"

    def test_required_fields_per_subcommand(self) -> None:
        args = build_parser().parse_args(["train", "--seed", "1"])

        with pytest.raises(ConfigError) as exc_info:
            resolve_config(args)

        assert "train_csv" in exc_info.value.message

    def test_checkpoint_dir_defaults_to_output(self) -> None:
        args = build_parser().parse_args(["score", "--test-csv", "t.csv", "--out", "somewhere"])

        assert resolve_config(args).artifacts_dir == Path("somewhere")


class TestExitCodes:
    """Tests for the process exit status of ``main``."""

    def test_missing_seed_is_config_error(self, run_dir: Path) -> None:
        assert main(["simulate", "--out", str(run_dir)]) == 2

    def test_missing_input_file(self, run_dir: Path, synthetic_schema_file: Path) -> None:
        code = main(
            [
                "train",
                "--seed",
                "1",
                "--train-csv",
                str(run_dir / "absent.csv"),
                "--schema",
                str(synthetic_schema_file),
                "--out",
                str(run_dir),
            ]
        )

        assert code == 2

    def test_missing_schema(self, run_dir: Path) -> None:
        train_csv = run_dir / "train.csv"
        train_csv.write_text("time,x,u\n1,0.0,1.0\n")

        code = main(
            [
                "train",
                "--seed",
                "1",
                "--train-csv",
                str(train_csv),
                "--schema",
                str(run_dir / "schema.json"),
                "--out",
                str(run_dir),
            ]
        )

        assert code == 2

    def test_missing_checkpoint(self, run_dir: Path) -> None:
        test_csv = run_dir / "test.csv"
        test_csv.write_text("time,x,u,label\n1,0.0,1.0,0\n")

        assert main(["score", "--test-csv", str(test_csv), "--out", str(run_dir)]) == 2

    def test_malformed_data(self, run_dir: Path, synthetic_schema_file: Path) -> None:
        train_csv = run_dir / "train.csv"
        train_csv.write_text("time,x,label\n1,0.0,0\n2,1.0,0\n")

        code = main(
            [
                "train",
                "--seed",
                "1",
                "--train-csv",
                str(train_csv),
                "--schema",
                str(synthetic_schema_file),
                "--out",
                str(run_dir),
            ]
        )

        assert code == 3

    def test_single_class_scores(self, run_dir: Path) -> None:
        scores = run_dir / "scores.csv"
        scores.write_text("time_index,score,label\n1,0.1,0\n2,0.2,0\n")

        assert main(["eval", "--scores", str(scores), "--out", str(run_dir)]) == 3

    def test_invalid_threads(self, run_dir: Path) -> None:
        assert _simulate(run_dir, 1, "--threads", "0", "--train-length", "10") == 2


class TestSimulate:
    """Tests for synthetic data generation through the CLI."""

    def test_same_seed_same_bytes(self, tmp_path: Path) -> None:
        first, second = tmp_path / "a", tmp_path / "b"

        assert _simulate(first, 5, "--train-length", "50", "--test-length", "2100") == 0
        assert _simulate(second, 5, "--train-length", "50", "--test-length", "2100") == 0

        for name in SIMULATED_FILES:
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_streams_and_seeds_differ(self, tmp_path: Path) -> None:
        assert _simulate(tmp_path / "a", 5, "--train-length", "50", "--test-length", "50") == 0
        assert _simulate(tmp_path / "b", 6, "--train-length", "50", "--test-length", "50") == 0

        train_a = pd.read_csv(tmp_path / "a" / "train.csv")
        test_a = pd.read_csv(tmp_path / "a" / "test.csv")
        train_b = pd.read_csv(tmp_path / "b" / "train.csv")
        assert not train_a["x"].equals(test_a["x"])
        assert not train_a["x"].equals(train_b["x"])

    def test_default_lengths_and_labels(self, run_dir: Path) -> None:
        assert _simulate(run_dir) == 0

        train = pd.read_csv(run_dir / "train.csv")
        test = pd.read_csv(run_dir / "test.csv")
        truth = pd.read_csv(run_dir / "ground_truth.csv")
        assert list(test.columns) == ["time", "x", "u", "label"]
        assert len(train) == len(test) == len(truth) == 10000
        assert train["label"].sum() == 0
        assert test["label"].sum() == 1000
        assert test.loc[test["time"].between(901, 1000), "label"].eq(1).all()
        assert (run_dir / RUN_CONFIG_FILE).exists()

    def test_low_noise_has_no_anomalies(self, run_dir: Path) -> None:
        assert _simulate(run_dir, 5, "--low-noise", "--test-length", "2000", "--train-length", "10") == 0

        test = pd.read_csv(run_dir / "test.csv")
        truth = pd.read_csv(run_dir / "ground_truth.csv")
        assert test["label"].sum() == 0
        assert (test["x"] - truth["x"]).std() < 0.2


class TestEval:
    """Tests for the eval subcommand."""

    def test_report_from_score_file(self, run_dir: Path) -> None:
        scores = run_dir / "scores.csv"
        scores.write_text("time_index,score,label\n1,1.0,0\n2,2.0,1\n3,3.0,0\n4,4.0,1\n")

        assert main(["eval", "--scores", str(scores), "--out", str(run_dir)]) == 0

        report = read_report(run_dir / "report.txt")
        assert report.best_f1 == pytest.approx(0.8)
        assert report.auc == 0.75
        assert report.threshold == 2.0
        assert (run_dir / "roc.csv").exists()


class TestSettings:
    """Tests for environment-driven process settings."""

    def test_environment_overrides(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("BISSM_THREADS", "3")
        monkeypatch.setenv("BISSM_OUTPUT_DIR", "elsewhere")

        settings = Settings()

        assert settings.threads == 3
        assert settings.output_dir == Path("elsewhere")

    def test_explicit_values(self, test_settings: Settings) -> None:
        assert test_settings.threads == 1
        assert test_settings.log_level == "DEBUG"
        assert test_settings.output_dir.name == "runs"


class TestWorkerThreads:
    """Tests for the BISSM_THREADS cap on --threads."""

    def test_flag_is_capped(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setattr("bissm.cli.settings", Settings(threads=2))

        assert worker_threads(5) == 2
        assert worker_threads(1) == 1

    def test_cap_is_the_default(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setattr("bissm.cli.settings", Settings(threads=3))

        assert worker_threads(None) == 3

    def test_zero_is_rejected(self) -> None:
        with pytest.raises(ConfigError) as exc_info:
            worker_threads(0)

        assert exc_info.value.code == "INVALID_THREADS"

    def test_default_cap_within_bounds(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.delenv("BISSM_THREADS", raising=False)

        assert 1 <= Settings(_env_file=None).threads <= 64
