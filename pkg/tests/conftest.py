"""Global test fixtures."""

from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from bissm.config import Settings
from bissm.core.model import ModelParams
from bissm.data.normalization import apply_normalization, fit_normalization
from bissm.data.synthetic import SYNTHETIC_SCHEMA, synth_generate
from bissm.data.windows import WindowedDataset, make_windows
from bissm.models.config import ModelConfig
from bissm.persistence.artifacts import ArtifactStore

GradCheck = Callable[[Callable[[np.ndarray], float], np.ndarray], np.ndarray]


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for test data."""
    return np.random.default_rng(1234)


@pytest.fixture
def numeric_grad() -> GradCheck:
    """Central finite-difference gradient of a scalar function of one array."""

    def compute(fn: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
        x = np.array(x, dtype=np.float64)
        grad = np.zeros_like(x)
        for index in np.ndindex(x.shape):
            original = x[index]
            x[index] = original + eps
            upper = fn(x.copy())
            x[index] = original - eps
            lower = fn(x.copy())
            x[index] = original
            grad[index] = (upper - lower) / (2 * eps)
        return grad

    return compute


@pytest.fixture
def tiny_config() -> ModelConfig:
    """Miniature network, small enough for finite-difference checks."""
    return ModelConfig(
        state_dim=2,
        xl=3,
        ul=4,
        signal_dim=1,
        control_dim=2,
        transition_hidden=3,
        bilstm_layers=1,
        epochs=2,
        batch_size=8,
        shard_size=3,
        seed=7,
    )


@pytest.fixture
def tiny_params(tiny_config: ModelConfig) -> ModelParams:
    return ModelParams.initialize(tiny_config)


@pytest.fixture
def tiny_windows(tiny_config: ModelConfig) -> WindowedDataset:
    """Normalized windows over 60 synthetic samples."""
    series = synth_generate(60, 0.5, 1.0, seed=3)
    frame = apply_normalization(series.frame, fit_normalization(series.frame))
    return make_windows(frame, tiny_config.xl, tiny_config.ul)


@pytest.fixture
def run_dir(tmp_path: Path) -> Path:
    """Empty output directory for one run."""
    path = tmp_path / "run"
    path.mkdir()
    return path


@pytest.fixture
def artifact_store(run_dir: Path) -> ArtifactStore:
    return ArtifactStore(base_dir=run_dir)


@pytest.fixture
def test_settings(tmp_path: Path) -> Settings:
    """Settings pointing at a temporary output directory."""
    return Settings(threads=1, log_level="DEBUG", output_dir=tmp_path / "runs")


@pytest.fixture
def synthetic_schema_file(tmp_path: Path) -> Path:
    path = tmp_path / "schema.json"
    path.write_text(SYNTHETIC_SCHEMA.model_dump_json(indent=2))
    return path
