"""Training, evaluation and filtering result models."""

from pydantic import BaseModel, Field, model_validator


class EpochRecord(BaseModel):
    """Mean objective for one training epoch."""

    epoch: int = Field(ge=1)
    train_loss: float
    val_loss: float | None = None


class TrainingLog(BaseModel):
    """Per-epoch losses of a training run."""

    epochs: list[EpochRecord] = Field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def losses(self) -> list[float]:
        return [record.train_loss for record in self.epochs]


class RocPoint(BaseModel):
    """One point of the ROC curve."""

    fpr: float = Field(ge=0, le=1)
    tpr: float = Field(ge=0, le=1)
    threshold: float


class EvalReport(BaseModel):
    """Ranking and thresholded detection quality of a score series.

    Attributes:
        auc: Area under the ROC curve
        best_f1: Largest F1 over all thresholds
        precision: Precision at the best-F1 threshold
        recall: Recall at the best-F1 threshold
        threshold: Scores >= threshold are flagged anomalous
        roc: ROC points from (0, 0) to (1, 1)
    """

    auc: float = Field(ge=0, le=1)
    best_f1: float = Field(ge=0, le=1)
    precision: float = Field(ge=0, le=1)
    recall: float = Field(ge=0, le=1)
    threshold: float
    n_samples: int = Field(ge=0)
    n_anomalies: int = Field(ge=0)
    roc: list[RocPoint] = Field(default_factory=list, exclude=True)

    @model_validator(mode="after")
    def _check_f1(self) -> "EvalReport":
        denominator = self.precision + self.recall
        expected = 0.0 if denominator == 0 else 2 * self.precision * self.recall / denominator
        if abs(expected - self.best_f1) > 1e-9:
            raise ValueError(
                f"best_f1 {self.best_f1} inconsistent with precision/recall ({expected})"
            )
        return self


class SmoothingStats(BaseModel):
    """Squared reconstruction error of forward and backward filtering.

    The transition fields cover only time steps near a control change and are
    None when no transition mask was supplied or it selects nothing.
    """

    forward_median: float
    backward_median: float
    forward_mean: float
    backward_mean: float
    transition_forward_mean: float | None = None
    transition_backward_mean: float | None = None
    n_samples: int
