"""Integration tests running the subcommands end to end on simulated data."""

import logging
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from bissm.cli import main
from bissm.config import Settings
from bissm.core.model import ModelParams, evaluate_loss
from bissm.data.frame import load_csv
from bissm.data.normalization import apply_normalization
from bissm.data.windows import make_windows, split_train_val
from bissm.persistence.artifacts import ArtifactStore, read_report

# One full anomaly block in the test series, tiny network and schedule
FAST_SIMULATION = ["--train-length", "600", "--test-length", "1000"]
FAST_TRAINING = ["--epochs", "2", "--state-dim", "2", "--batch-size", "128"]


def _pipeline(base: Path, seed: int, simulate_args: list[str], train_args: list[str]) -> Path:
    data, model = base / "data", base / "model"
    assert main(["simulate", "--seed", str(seed), "--out", str(data), *simulate_args]) == 0
    assert (
        main(
            [
                "train",
                "--seed",
                str(seed),
                "--train-csv",
                str(data / "train.csv"),
                "--schema",
                str(data / "schema.json"),
                "--out",
                str(model),
                *train_args,
            ]
        )
        == 0
    )
    return base


def _score_and_eval(base: Path) -> Path:
    data, model, results = base / "data", base / "model", base / "results"
    common = ["--checkpoint", str(model), "--out", str(results)]
    assert main(["score", "--test-csv", str(data / "test.csv"), *common]) == 0
    assert main(["eval", "--scores", str(results / "scores.csv"), "--out", str(results)]) == 0
    return results


def _filter(base: Path) -> pd.DataFrame:
    data, model, results = base / "data", base / "model", base / "results"
    code = main(
        [
            "filter",
            "--test-csv",
            str(data / "test.csv"),
            "--ground-truth",
            str(data / "ground_truth.csv"),
            "--checkpoint",
            str(model),
            "--out",
            str(results),
        ]
    )
    assert code == 0
    return pd.read_csv(results / "smoothing.csv")


@pytest.fixture(scope="module")
def fast_run(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """Simulated data and a model trained for two epochs."""
    return _pipeline(tmp_path_factory.mktemp("fast"), 11, FAST_SIMULATION, FAST_TRAINING)


class TestFastPipeline:
    """End-to-end run with a tiny schedule."""

    def test_train_writes_artifacts(self, fast_run: Path) -> None:
        model = fast_run / "model"

        for name in ("checkpoint.json", "error_model.json", "noise.json", "training_log.json"):
            assert (model / name).exists()
        log = ArtifactStore(model).load_training_log()
        assert len(log.epochs) == 2
        assert all(record.val_loss is not None for record in log.epochs)

    def test_score_and_eval(self, fast_run: Path) -> None:
        results = _score_and_eval(fast_run)

        scores = pd.read_csv(results / "scores.csv")
        # 1000 rows, windows from row 16 on, the first window unscored
        assert len(scores) == 1000 - 15 - 1
        assert scores["time_index"].iloc[0] == 17
        report = read_report(results / "report.txt")
        assert 0.0 <= report.auc <= 1.0
        assert report.n_samples == len(scores)
        assert report.n_anomalies == 100

    def test_filter(self, fast_run: Path) -> None:
        smoothing = _filter(fast_run)

        assert len(smoothing) == 1000 - 15
        assert list(smoothing.columns) == [
            "time_index",
            "ground_truth",
            "observation",
            "forward_recon",
            "backward_recon",
        ]
        assert smoothing["forward_recon"].notna().all()
        assert smoothing["backward_recon"].iloc[:-1].notna().all()
        assert np.isnan(smoothing["backward_recon"].iloc[-1])

    def test_training_is_deterministic(self, fast_run: Path, tmp_path: Path) -> None:
        repeat = _pipeline(tmp_path, 11, FAST_SIMULATION, FAST_TRAINING)

        for name in ("data/train.csv", "data/test.csv", "model/checkpoint.json"):
            assert (repeat / name).read_bytes() == (fast_run / name).read_bytes()
        first = _score_and_eval(fast_run) / "scores.csv"
        second = _score_and_eval(repeat) / "scores.csv"
        assert first.read_bytes() == second.read_bytes()

    def test_threads_flag(
        self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch, caplog: pytest.LogCaptureFixture
    ) -> None:
        """Worker threads leave the trained parameters bit-identical."""
        monkeypatch.setattr("bissm.cli.settings", Settings(threads=4))
        caplog.set_level(logging.INFO, logger="bissm")
        single = _pipeline(tmp_path / "one", 11, FAST_SIMULATION, [*FAST_TRAINING, "--threads", "1"])
        threaded = _pipeline(tmp_path / "three", 11, FAST_SIMULATION, [*FAST_TRAINING, "--threads", "3"])

        _, single_params = ArtifactStore(single / "model").load_checkpoint()
        _, sharded_params = ArtifactStore(threaded / "model").load_checkpoint()
        for pid, value in single_params.arrays().items():
            np.testing.assert_array_equal(sharded_params.arrays()[pid], value)
        assert (threaded / "model" / "checkpoint.json").read_bytes() == (
            single / "model" / "checkpoint.json"
        ).read_bytes()
        assert caplog.text.count("Mean squared state norm on training windows") == 2


@pytest.mark.slow
class TestSyntheticBenchmark:
    """Full-length synthetic runs with the default configuration."""

    def test_mean_auc_over_seeds(self, tmp_path: Path) -> None:
        aucs = []
        for seed in (1, 2, 3):
            base = _pipeline(tmp_path / str(seed), seed, [], [])
            aucs.append(read_report(_score_and_eval(base) / "report.txt").auc)

        assert np.mean(aucs) >= 0.90, aucs

    def test_training_reduces_loss(self, tmp_path: Path) -> None:
        base = _pipeline(tmp_path, 4, [], [])
        store = ArtifactStore(base / "model")
        checkpoint, _ = store.load_checkpoint()
        frame = load_csv(base / "data" / "train.csv", checkpoint.dataset)
        windows = make_windows(
            apply_normalization(frame, checkpoint.normalization), checkpoint.dataset.xl, checkpoint.dataset.ul
        )
        train_windows, _ = split_train_val(windows, checkpoint.config.train_fraction)

        initial = evaluate_loss(train_windows, ModelParams.initialize(checkpoint.config), checkpoint.config)
        final = store.load_training_log().epochs[-1].train_loss

        assert initial / final >= 5.0

    def test_backward_smoothing_beats_forward(self, tmp_path: Path) -> None:
        base = _pipeline(tmp_path, 5, ["--low-noise"], [])

        smoothing = _filter(base).iloc[:-1]

        forward = (smoothing["forward_recon"] - smoothing["ground_truth"]) ** 2
        backward = (smoothing["backward_recon"] - smoothing["ground_truth"]) ** 2
        assert backward.median() < forward.median()
        assert forward.median() < 0.005
        assert backward.median() < 0.005
