"""Model artifacts and result files of a run directory."""

import logging
import math
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from bissm.config import settings
from bissm.core.evaluation import ScoreSeries
from bissm.core.exceptions import (
    CsvFormatError,
    MissingArtifactError,
    MissingColumnError,
    PersistenceError,
)
from bissm.core.filtering import NoiseEstimates, SmoothingResult
from bissm.core.model import ModelParams
from bissm.core.scoring import ErrorModel
from bissm.models.checkpoint import CHECKPOINT_VERSION, Checkpoint
from bissm.models.config import ModelConfig
from bissm.models.reports import EvalReport, TrainingLog
from bissm.models.schema import DatasetSchema, NormalizationSpec
from bissm.persistence.storage import (
    atomic_write,
    atomic_write_csv,
    atomic_write_text,
    safe_read,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.json"
ERROR_MODEL_FILE = "error_model.json"
NOISE_FILE = "noise.json"
TRAINING_LOG_FILE = "training_log.json"
RUN_CONFIG_FILE = "run_config.json"

SCORE_COLUMNS = ("time_index", "score", "label")
REPORT_FIELDS = (
    "auc",
    "best_f1",
    "precision",
    "recall",
    "threshold",
    "n_samples",
    "n_anomalies",
)


def _require(data: dict[str, Any] | None, path: Path, hint: str) -> dict[str, Any]:
    if data is None:
        raise MissingArtifactError(str(path), hint)
    return data


def _invalid(path: Path, error: Exception) -> PersistenceError:
    return PersistenceError(
        code="INVALID_ARTIFACT",
        message=f"Invalid artifact {path}: {error}",
        details={"path": str(path), "error": str(error)},
    )


def _format(value: Any) -> str:
    return repr(value) if isinstance(value, int) else repr(float(value))


def _matrix(values: Any) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


class ArtifactStore:
    """Reads and writes the files a run leaves in its output directory.

    ``train`` writes the checkpoint, error model, noise estimates and
    training log; ``score`` and ``filter`` read them back.
    """

    def __init__(self, base_dir: Path | None = None):
        """Initialize the artifact store.

        Args:
            base_dir: Run directory (defaults to settings)
        """
        self.base_dir = base_dir or settings.output_dir

    def path(self, name: str) -> Path:
        return self.base_dir / name

    # -------------------------------------------------------------------------
    # Model artifacts
    # -------------------------------------------------------------------------

    def save_checkpoint(
        self,
        config: ModelConfig,
        dataset: DatasetSchema,
        normalization: NormalizationSpec,
        params: ModelParams,
    ) -> Path:
        checkpoint = Checkpoint(
            config=config,
            dataset=dataset,
            normalization=normalization,
            params={pid: array.tolist() for pid, array in sorted(params.arrays().items())},
        )
        path = self.path(CHECKPOINT_FILE)
        atomic_write(path, checkpoint.model_dump(mode="json"))
        logger.info(f"Wrote checkpoint {path}")
        return path

    def load_checkpoint(self) -> tuple[Checkpoint, ModelParams]:
        """Load the checkpoint and rebuild the parameters it stores.

        Raises:
            MissingArtifactError: No checkpoint in the run directory
            PersistenceError: The checkpoint is malformed or of another version
        """
        path = self.path(CHECKPOINT_FILE)
        data = _require(safe_read(path), path, "run 'bissm train' first or pass --checkpoint")
        try:
            checkpoint = Checkpoint.model_validate(data)
        except ValidationError as e:
            raise _invalid(path, e)
        if checkpoint.version != CHECKPOINT_VERSION:
            raise PersistenceError(
                code="CHECKPOINT_VERSION",
                message=f"Checkpoint {path} has version {checkpoint.version}, "
                f"expected {CHECKPOINT_VERSION}",
                details={"path": str(path), "version": checkpoint.version},
            )
        arrays = {pid: _matrix(values) for pid, values in checkpoint.params.items()}
        try:
            params = ModelParams.from_arrays(checkpoint.config, arrays)
        except (KeyError, ValueError) as e:
            raise _invalid(path, e)
        return checkpoint, params

    def save_error_model(self, error_model: ErrorModel) -> Path:
        path = self.path(ERROR_MODEL_FILE)
        atomic_write(
            path,
            {
                "sigma": error_model.sigma.tolist(),
                "sigma_inv": error_model.sigma_inv.tolist(),
                "mean_residual": error_model.mean_residual.tolist(),
                "epsilon": error_model.epsilon,
            },
        )
        return path

    def load_error_model(self) -> ErrorModel:
        path = self.path(ERROR_MODEL_FILE)
        data = _require(safe_read(path), path, "run 'bissm train' to fit the error model")
        try:
            return ErrorModel(
                sigma=_matrix(data["sigma"]),
                sigma_inv=_matrix(data["sigma_inv"]),
                mean_residual=_matrix(data["mean_residual"]),
                epsilon=float(data["epsilon"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise _invalid(path, e)

    def save_noise(self, noise: NoiseEstimates) -> Path:
        path = self.path(NOISE_FILE)
        atomic_write(
            path,
            {
                "q_forward": noise.q_forward.tolist(),
                "q_backward": noise.q_backward.tolist(),
                "r": noise.r.tolist(),
            },
        )
        return path

    def load_noise(self) -> NoiseEstimates:
        path = self.path(NOISE_FILE)
        data = _require(safe_read(path), path, "run 'bissm train' to estimate filter noise")
        try:
            return NoiseEstimates(
                q_forward=_matrix(data["q_forward"]),
                q_backward=_matrix(data["q_backward"]),
                r=_matrix(data["r"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise _invalid(path, e)

    def save_training_log(self, log: TrainingLog) -> Path:
        path = self.path(TRAINING_LOG_FILE)
        atomic_write(path, log.model_dump(mode="json"))
        return path

    def load_training_log(self) -> TrainingLog:
        path = self.path(TRAINING_LOG_FILE)
        data = _require(safe_read(path), path, "run 'bissm train' first")
        try:
            return TrainingLog.model_validate(data)
        except ValidationError as e:
            raise _invalid(path, e)

    def save_run_config(self, config: BaseModel) -> Path:
        path = self.path(RUN_CONFIG_FILE)
        atomic_write(path, config.model_dump(mode="json"))
        return path

    # -------------------------------------------------------------------------
    # Result files
    # -------------------------------------------------------------------------

    def write_scores(self, series: ScoreSeries, name: str) -> Path:
        path = self.path(name)
        atomic_write_csv(
            path,
            pd.DataFrame(
                {"time_index": series.time_index, "score": series.scores, "label": series.labels}
            ),
        )
        logger.info(f"Wrote {len(series)} scores to {path}")
        return path

    def write_report(self, report: EvalReport, report_name: str, roc_name: str) -> tuple[Path, Path]:
        """Key-value text report plus the ROC points as CSV."""
        report_path = self.path(report_name)
        values = report.model_dump()
        atomic_write_text(
            report_path, "".join(f"{key}: {_format(values[key])}\n" for key in REPORT_FIELDS)
        )
        roc_path = self.path(roc_name)
        atomic_write_csv(roc_path, pd.DataFrame([p.model_dump() for p in report.roc]))
        logger.info(f"Wrote report {report_path} and ROC points {roc_path}")
        return report_path, roc_path

    def write_smoothing(
        self, result: SmoothingResult, name: str, signal_columns: Sequence[str] = ()
    ) -> Path:
        """One row per window; multi-signal data gets one column per signal and series."""
        path = self.path(name)
        columns = ("ground_truth", "observation", "forward_recon", "backward_recon")
        data: dict[str, Any] = {"time_index": result.time_index}
        series = {
            "ground_truth": result.ground_truth,
            "observation": result.observation,
            "forward_recon": result.forward_recon,
            "backward_recon": result.backward_recon,
        }
        for column in columns:
            values = series[column]
            if values is None:
                values = np.full_like(result.observation, np.nan)
            if values.shape[1] == 1:
                data[column] = values[:, 0]
            else:
                for j, signal in enumerate(signal_columns or range(values.shape[1])):
                    data[f"{column}_{signal}"] = values[:, j]
        atomic_write_csv(path, pd.DataFrame(data))
        logger.info(f"Wrote smoothing series to {path}")
        return path


def read_scores(path: Path) -> ScoreSeries:
    """Parse a score CSV with columns time_index, score, label."""
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise MissingArtifactError(str(path), "run 'bissm score' first or pass --scores")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise CsvFormatError(str(path), 1, str(e))
    for column in SCORE_COLUMNS:
        if column not in frame.columns:
            raise MissingColumnError(str(path), column)
    for column in ("score", "label"):
        bad = frame[column].isna().to_numpy()
        if bad.any():
            raise CsvFormatError(str(path), int(np.argmax(bad)) + 2, f"empty {column}")
    return ScoreSeries(
        time_index=frame["time_index"].to_numpy(),
        scores=frame["score"].to_numpy(dtype=np.float64),
        labels=frame["label"].to_numpy(dtype=np.int64),
    )


def read_report(path: Path) -> EvalReport:
    """Parse a report written by :meth:`ArtifactStore.write_report`."""
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise MissingArtifactError(str(path), "run 'bissm eval' first")
    values: dict[str, float] = {}
    for line in lines:
        if not line.strip():
            continue
        key, sep, raw = line.partition(":")
        if not sep:
            raise _invalid(path, ValueError(f"not a 'key: value' line: {line!r}"))
        try:
            values[key.strip()] = float(raw.strip())
        except ValueError as e:
            raise _invalid(path, e)
    try:
        return EvalReport.model_validate(
            {k: int(v) if k.startswith("n_") and math.isfinite(v) else v for k, v in values.items()}
        )
    except ValidationError as e:
        raise _invalid(path, e)
