"""Model and run configuration models."""

from enum import Enum
from pathlib import Path

from pydantic import BaseModel, Field, model_validator

from bissm.core.autodiff import AdamHyperParams


class LossWeights(BaseModel):
    """Weights of the six terms of the training objective; all must be positive."""

    alpha1: float = Field(default=1.0, gt=0)
    alpha2: float = Field(default=1.0, gt=0)
    alpha3: float = Field(default=1.0, gt=0)
    beta1: float = Field(default=0.1, gt=0)
    beta2: float = Field(default=0.1, gt=0)
    beta3: float = Field(default=0.1, gt=0)


class ModelConfig(BaseModel):
    """Network structure and training schedule.

    ``control_dim`` is the width of a control window step, i.e. the number of
    signal columns plus the (one-hot expanded) control columns.
    """

    state_dim: int = Field(default=4, ge=1)
    xl: int = Field(default=8, ge=1)
    ul: int = Field(default=16, ge=1)
    signal_dim: int = Field(default=1, ge=1)
    control_dim: int = Field(default=2, ge=1)
    transition_hidden: int = Field(default=4, ge=1)
    bilstm_layers: int = Field(default=2, ge=1)

    weights: LossWeights = Field(default_factory=LossWeights)

    learning_rate: float = Field(default=1e-3, gt=0)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)

    epochs: int = Field(default=50, ge=1)
    batch_size: int = Field(default=64, ge=1)
    # Triplets per gradient tape; fixed so results do not depend on the thread count
    shard_size: int = Field(default=32, ge=1)
    patience: int = Field(default=5, ge=1)
    train_fraction: float = Field(default=0.75, gt=0, lt=1)
    seed: int = 0

    def adam(self) -> AdamHyperParams:
        return AdamHyperParams(
            lr=self.learning_rate,
            beta1=self.adam_beta1,
            beta2=self.adam_beta2,
            eps=self.adam_eps,
        )


class Subcommand(str, Enum):
    """CLI subcommands."""

    SIMULATE = "simulate"
    TRAIN = "train"
    SCORE = "score"
    EVAL = "eval"
    FILTER = "filter"


class SimulationConfig(BaseModel):
    """Synthetic data settings (standard deviations)."""

    train_length: int = Field(default=10000, ge=1)
    test_length: int = Field(default=10000, ge=1)
    sigma_w: float = Field(default=0.5, ge=0)
    sigma_v: float = Field(default=1.0, ge=0)
    anomaly_sigma_w: float = Field(default=1.0, ge=0)
    anomaly_sigma_v: float = Field(default=2.0, ge=0)
    low_noise: bool = False


class RunConfig(BaseModel):
    """Everything one CLI invocation needs; loaded from --config, overridden by flags."""

    subcommand: Subcommand
    output_dir: Path = Path("runs")
    seed: int | None = None

    train_csv: Path | None = None
    test_csv: Path | None = None
    ground_truth_csv: Path | None = None
    schema_path: Path | None = None
    checkpoint_dir: Path | None = None
    scores_csv: Path | None = None

    report_name: str = "report.txt"
    roc_name: str = "roc.csv"
    scores_name: str = "scores.csv"
    smoothing_name: str = "smoothing.csv"

    transition_radius: int = Field(default=8, ge=0)

    model: ModelConfig = Field(default_factory=ModelConfig)
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)

    @model_validator(mode="after")
    def _check_required(self) -> "RunConfig":
        required: dict[Subcommand, list[str]] = {
            Subcommand.SIMULATE: ["seed"],
            Subcommand.TRAIN: ["seed", "train_csv", "schema_path"],
            Subcommand.SCORE: ["test_csv"],
            Subcommand.EVAL: ["scores_csv"],
            Subcommand.FILTER: ["test_csv", "ground_truth_csv"],
        }
        missing = [name for name in required[self.subcommand] if getattr(self, name) is None]
        if missing:
            raise ValueError(f"'{self.subcommand.value}' requires: {', '.join(missing)}")
        return self

    @property
    def artifacts_dir(self) -> Path:
        """Where train writes and score/filter read model artifacts."""
        return self.checkpoint_dir or self.output_dir
