"""Command-line entry point: simulate, train, score, eval and filter."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from bissm import __version__
from bissm.config import settings
from bissm.core.evaluation import evaluate_scores
from bissm.core.exceptions import BissmError, ConfigError, MissingArtifactError
from bissm.core.filtering import LearnedDynamics, estimate_noise, smooth_series
from bissm.core.model import mean_state_norm, train
from bissm.core.scoring import fit_error_model, score_series
from bissm.data.frame import TimeSeriesFrame, control_transition_mask, downsample, load_csv, write_csv
from bissm.data.normalization import apply_normalization, fit_normalization
from bissm.data.synthetic import (
    LOW_NOISE_SIGMA,
    SYNTHETIC_SCHEMA,
    AnomalyRange,
    periodic_anomalies,
    synth_generate,
)
from bissm.data.windows import WindowedDataset, make_windows, split_train_val
from bissm.models.config import RunConfig, Subcommand
from bissm.models.schema import DatasetSchema, NormalizationSpec
from bissm.persistence.artifacts import ArtifactStore, read_scores
from bissm.persistence.storage import atomic_write, safe_read

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

TRAIN_FILE = "train.csv"
TEST_FILE = "test.csv"
GROUND_TRUTH_FILE = "ground_truth.csv"
SCHEMA_FILE = "schema.json"

# (flag, dest, type, config key path, help)
_OVERRIDES: list[tuple[str, str, type, tuple[str, ...], str]] = [
    ("--train-csv", "train_csv", Path, ("train_csv",), "Training CSV of normal data"),
    ("--test-csv", "test_csv", Path, ("test_csv",), "Test CSV to score or filter"),
    ("--ground-truth", "ground_truth_csv", Path, ("ground_truth_csv",), "Noiseless test CSV"),
    ("--schema", "schema_path", Path, ("schema_path",), "Dataset schema JSON"),
    ("--checkpoint", "checkpoint_dir", Path, ("checkpoint_dir",), "Directory of a trained run"),
    ("--scores", "scores_csv", Path, ("scores_csv",), "Score CSV to evaluate"),
    ("--report-name", "report_name", str, ("report_name",), "Report file name"),
    ("--roc-name", "roc_name", str, ("roc_name",), "ROC points CSV file name"),
    ("--scores-name", "scores_name", str, ("scores_name",), "Score CSV file name"),
    ("--smoothing-name", "smoothing_name", str, ("smoothing_name",), "Smoothing CSV file name"),
    ("--transition-radius", "transition_radius", int, ("transition_radius",), "Steps around a control change counted as transition"),
    ("--state-dim", "state_dim", int, ("model", "state_dim"), "Hidden state dimension"),
    ("--epochs", "epochs", int, ("model", "epochs"), "Maximum training epochs"),
    ("--batch-size", "batch_size", int, ("model", "batch_size"), "Triplets per minibatch"),
    ("--learning-rate", "learning_rate", float, ("model", "learning_rate"), "Adam step size"),
    ("--patience", "patience", int, ("model", "patience"), "Epochs without validation improvement before stopping"),
    ("--train-length", "train_length", int, ("simulation", "train_length"), "Simulated training samples"),
    ("--test-length", "test_length", int, ("simulation", "test_length"), "Simulated test samples"),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bissm",
        description="Bidirectional state-space anomaly detection for multivariate time series",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)

    helps = {
        Subcommand.SIMULATE: "Generate synthetic train/test/ground-truth CSVs",
        Subcommand.TRAIN: "Train the model and fit the error model and filter noise",
        Subcommand.SCORE: "Score test windows by Mahalanobis distance",
        Subcommand.EVAL: "Compute AUC and best F1 from a score CSV",
        Subcommand.FILTER: "Forward/backward unscented Kalman reconstruction",
    }
    for subcommand, help_text in helps.items():
        sub = subparsers.add_parser(subcommand.value, help=help_text)
        sub.add_argument("--config", type=Path, help="Run configuration JSON")
        sub.add_argument("--out", type=Path, dest="output_dir", help="Output directory")
        sub.add_argument("--seed", type=int, help="Random seed")
        sub.add_argument("--threads", type=int, help="Worker threads (at most BISSM_THREADS)")
        sub.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
        if subcommand is Subcommand.SIMULATE:
            sub.add_argument(
                "--low-noise",
                action="store_true",
                default=None,
                help="Noise std 0.1 everywhere and no anomalies",
            )
        for flag, dest, kind, _, flag_help in _OVERRIDES:
            sub.add_argument(flag, dest=dest, type=kind, help=flag_help)
    return parser


def _merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _set_path(target: dict[str, Any], keys: tuple[str, ...], value: Any) -> None:
    for key in keys[:-1]:
        target = target.setdefault(key, {})
    target[keys[-1]] = value


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file values, overridden by every flag given on the command line.

    Raises:
        ConfigError: Unreadable or invalid configuration
    """
    raw: dict[str, Any] = {"output_dir": str(settings.output_dir)}
    if args.config is not None:
        loaded = safe_read(args.config)
        if loaded is None:
            raise ConfigError(
                code="CONFIG_NOT_FOUND",
                message=f"Config file '{args.config}' not found",
                details={"path": str(args.config)},
            )
        raw = _merge(raw, loaded)

    overrides: dict[str, Any] = {"subcommand": args.subcommand}
    for _, dest, _, keys, _ in _OVERRIDES:
        value = getattr(args, dest, None)
        if value is not None:
            _set_path(overrides, keys, str(value) if isinstance(value, Path) else value)
    if args.output_dir is not None:
        overrides["output_dir"] = str(args.output_dir)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "low_noise", None):
        _set_path(overrides, ("simulation", "low_noise"), True)

    try:
        return RunConfig.model_validate(_merge(raw, overrides))
    except ValidationError as e:
        raise ConfigError(
            code="INVALID_CONFIG",
            message=f"Invalid run configuration: {e}",
            details={"errors": e.errors(include_url=False)},
        )


def check_inputs(config: RunConfig) -> None:
    """Every input path named by the config must exist."""
    for name in ("train_csv", "test_csv", "ground_truth_csv", "schema_path", "scores_csv"):
        path = getattr(config, name)
        if path is not None and not path.exists():
            raise MissingArtifactError(str(path), f"check the '{name}' setting")
    if config.checkpoint_dir is not None and not config.checkpoint_dir.is_dir():
        raise MissingArtifactError(str(config.checkpoint_dir), "pass the output directory of 'bissm train'")


def _load_frame(path: Path, schema: DatasetSchema) -> TimeSeriesFrame:
    return downsample(load_csv(path, schema), schema.downsample)


def _prepare(
    path: Path, schema: DatasetSchema, normalization: NormalizationSpec
) -> tuple[TimeSeriesFrame, WindowedDataset]:
    frame = _load_frame(path, schema)
    return frame, make_windows(apply_normalization(frame, normalization), schema.xl, schema.ul)


# =============================================================================
# Subcommands
# =============================================================================


def cmd_simulate(config: RunConfig, threads: int) -> list[Path]:
    """Write train, test and noiseless ground-truth CSVs plus their schema."""
    sim = config.simulation
    assert config.seed is not None
    seed = config.seed
    anomalies: list[AnomalyRange]
    if sim.low_noise:
        sigma_w = sigma_v = LOW_NOISE_SIGMA
        anomalies = []
    else:
        sigma_w, sigma_v = sim.sigma_w, sim.sigma_v
        anomalies = periodic_anomalies(
            sim.test_length, sigma_w=sim.anomaly_sigma_w, sigma_v=sim.anomaly_sigma_v
        )

    train_series = synth_generate(sim.train_length, sigma_w, sigma_v, seed=seed, stream=0)
    test_series = synth_generate(
        sim.test_length, sigma_w, sigma_v, anomalies=anomalies, seed=seed, stream=1
    )
    out = config.output_dir
    written = [
        write_csv(train_series.frame, out / TRAIN_FILE, SYNTHETIC_SCHEMA),
        write_csv(test_series.frame, out / TEST_FILE, SYNTHETIC_SCHEMA),
        write_csv(test_series.ground_truth, out / GROUND_TRUTH_FILE, SYNTHETIC_SCHEMA),
    ]
    atomic_write(out / SCHEMA_FILE, SYNTHETIC_SCHEMA.model_dump(mode="json"))
    written.append(out / SCHEMA_FILE)
    logger.info(
        f"Simulated {sim.train_length} training and {sim.test_length} test samples "
        f"(sigma_w={sigma_w}, sigma_v={sigma_v}, {len(anomalies)} anomaly ranges) into {out}"
    )
    return written


def cmd_train(config: RunConfig, threads: int) -> list[Path]:
    """Fit normalization, train on the first part and fit the error model on the rest."""
    assert config.train_csv is not None and config.schema_path is not None
    schema = DatasetSchema.load(config.schema_path)
    frame = _load_frame(config.train_csv, schema)
    normalization = fit_normalization(frame)
    windows = make_windows(apply_normalization(frame, normalization), schema.xl, schema.ul)

    model_config = config.model.model_copy(
        update={
            "xl": schema.xl,
            "ul": schema.ul,
            "signal_dim": windows.signal_dim,
            "control_dim": windows.control_dim,
            "seed": config.seed,
        }
    )
    train_windows, val_windows = split_train_val(windows, model_config.train_fraction)
    logger.info(
        f"Training on {len(train_windows)} windows, validating on {len(val_windows)} "
        f"(d_x={windows.signal_dim}, union width={windows.control_dim}, threads={threads})"
    )
    params, log = train(train_windows, model_config, val=val_windows, threads=threads)
    state_norm = mean_state_norm(train_windows, params)
    logger.info(f"Mean squared state norm on training windows: {state_norm:.4g}")
    error_model = fit_error_model(val_windows, params)
    noise = estimate_noise(val_windows, params)

    store = ArtifactStore(config.output_dir)
    return [
        store.save_checkpoint(model_config, schema, normalization, params),
        store.save_error_model(error_model),
        store.save_noise(noise),
        store.save_training_log(log),
    ]


def cmd_score(config: RunConfig, threads: int) -> list[Path]:
    assert config.test_csv is not None
    artifacts = ArtifactStore(config.artifacts_dir)
    checkpoint, params = artifacts.load_checkpoint()
    error_model = artifacts.load_error_model()
    _, windows = _prepare(config.test_csv, checkpoint.dataset, checkpoint.normalization)
    series = score_series(windows, params, error_model)
    return [ArtifactStore(config.output_dir).write_scores(series, config.scores_name)]


def cmd_eval(config: RunConfig, threads: int) -> list[Path]:
    assert config.scores_csv is not None
    report = evaluate_scores(read_scores(config.scores_csv))
    logger.info(
        f"AUC={report.auc:.4f} best F1={report.best_f1:.4f} "
        f"(precision={report.precision:.4f}, recall={report.recall:.4f}, "
        f"threshold={report.threshold:.6g}) over {report.n_samples} samples"
    )
    return list(
        ArtifactStore(config.output_dir).write_report(report, config.report_name, config.roc_name)
    )


def cmd_filter(config: RunConfig, threads: int) -> list[Path]:
    """Reconstruct the test series by forward filtering and one backward step per window."""
    assert config.test_csv is not None and config.ground_truth_csv is not None
    artifacts = ArtifactStore(config.artifacts_dir)
    checkpoint, params = artifacts.load_checkpoint()
    noise = artifacts.load_noise()
    schema, normalization = checkpoint.dataset, checkpoint.normalization

    frame, windows = _prepare(config.test_csv, schema, normalization)
    _, truth_windows = _prepare(config.ground_truth_csv, schema, normalization)
    if len(truth_windows) != len(windows):
        raise ConfigError(
            code="GROUND_TRUTH_LENGTH",
            message=f"Ground truth has {len(truth_windows)} windows, test has {len(windows)}",
            details={"test": len(windows), "ground_truth": len(truth_windows)},
        )
    mask = control_transition_mask(frame, config.transition_radius)[max(schema.xl, schema.ul) - 1 :]

    result = smooth_series(
        windows,
        LearnedDynamics(params, windows),
        noise,
        ground_truth=truth_windows.signals[:, -1, :],
        transition_mask=mask,
    )
    if result.stats is not None:
        stats = result.stats
        logger.info(
            f"Squared error median forward={stats.forward_median:.3g} "
            f"backward={stats.backward_median:.3g}; mean forward={stats.forward_mean:.3g} "
            f"backward={stats.backward_mean:.3g}"
        )
    return [
        ArtifactStore(config.output_dir).write_smoothing(
            result, config.smoothing_name, windows.signal_columns
        )
    ]


COMMANDS: dict[Subcommand, Callable[[RunConfig, int], list[Path]]] = {
    Subcommand.SIMULATE: cmd_simulate,
    Subcommand.TRAIN: cmd_train,
    Subcommand.SCORE: cmd_score,
    Subcommand.EVAL: cmd_eval,
    Subcommand.FILTER: cmd_filter,
}


def worker_threads(requested: int | None) -> int:
    """Gradient worker threads: ``--threads`` if given, capped by BISSM_THREADS."""
    if requested is None:
        return settings.threads
    if requested < 1:
        raise ConfigError(
            code="INVALID_THREADS",
            message=f"--threads must be >= 1, got {requested}",
            details={"threads": requested},
        )
    if requested > settings.threads:
        logger.warning(f"--threads {requested} capped to BISSM_THREADS={settings.threads}")
    return min(requested, settings.threads)


def run(args: argparse.Namespace) -> list[Path]:
    """Resolve the configuration and run one subcommand; returns the files written."""
    config = resolve_config(args)
    check_inputs(config)
    threads = worker_threads(args.threads)
    written = COMMANDS[config.subcommand](config, threads)
    written.append(ArtifactStore(config.output_dir).save_run_config(config))
    for path in written:
        logger.info(f"Wrote {path}")
    return written


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point for the ``bissm`` console script."""
    args = build_parser().parse_args(argv)

    # Configure logging to stderr (stdout stays free for piping)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else getattr(logging, settings.log_level.upper()),
        format=LOG_FORMAT,
        stream=sys.stderr,
    )

    try:
        run(args)
    except BissmError as e:
        logger.error(f"{e.code}: {e.message}")
        return e.exit_code
    except Exception:
        logger.exception("Unexpected error")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
