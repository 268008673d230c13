"""ROC/AUC and best-F1 evaluation of anomaly score series.

All metrics are point-wise: every scored time step is judged on its own,
and a step is flagged anomalous when its score is >= the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from sklearn.metrics import auc as auc_area
from sklearn.metrics import f1_score, roc_auc_score, roc_curve

from bissm.core.exceptions import DataError, SingleClassError
from bissm.models.reports import EvalReport, RocPoint


@dataclass(frozen=True, eq=False)
class ScoreSeries:
    """Anomaly scores aligned with ground-truth labels, in time order."""

    time_index: np.ndarray
    scores: NDArray[np.float64]
    labels: NDArray[np.int64]

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "time_index", np.asarray(self.time_index))
        if not (len(self.time_index) == len(scores) == len(labels)):
            raise DataError(
                code="RAGGED_SCORES",
                message="time_index, scores and labels differ in length",
                details={"lengths": [len(self.time_index), len(scores), len(labels)]},
            )
        if not np.isfinite(scores).all():
            raise DataError(
                code="NON_FINITE_SCORES",
                message="Scores must be finite",
                details={"index": int(np.argmax(~np.isfinite(scores)))},
            )
        if not np.isin(labels, (0, 1)).all():
            raise DataError(
                code="NON_BINARY_LABELS",
                message="Labels must be 0 or 1",
                details={},
            )

    def __len__(self) -> int:
        return len(self.scores)


def _require_both_classes(series: ScoreSeries) -> tuple[int, int]:
    positives = int(series.labels.sum())
    negatives = len(series) - positives
    if positives == 0 or negatives == 0:
        raise SingleClassError(present=1 if positives else 0)
    return positives, negatives


def roc_auc(series: ScoreSeries) -> tuple[float, list[RocPoint]]:
    """AUC (ties count 1/2) and the ROC curve.

    The curve has one point per distinct score, swept from high to low, plus
    the (0, 0) origin; integrating it with trapezoids gives the same AUC.
    """
    _require_both_classes(series)
    auc = roc_auc_score(series.labels, series.scores)
    fpr, tpr, thresholds = roc_curve(series.labels, series.scores, drop_intermediate=False)
    # Older scikit-learn reports max(score) + 1 for the origin
    thresholds = np.r_[np.inf, thresholds[1:]]
    roc = [
        RocPoint(fpr=float(f), tpr=float(t), threshold=float(thr))
        for f, t, thr in zip(fpr, tpr, thresholds)
    ]
    return float(auc), roc


def trapezoid_auc(roc: list[RocPoint]) -> float:
    return float(auc_area([p.fpr for p in roc], [p.tpr for p in roc]))


def best_f1(series: ScoreSeries) -> tuple[float, float, float, float]:
    """Best F1 over every distinct score used as threshold.

    Returns (f1, precision, recall, threshold). Ties in F1 go to the higher
    precision, then to the lower threshold.
    """
    positives, negatives = _require_both_classes(series)
    fpr, tpr, thresholds = roc_curve(series.labels, series.scores, drop_intermediate=False)
    # Drop the origin; the rest holds one descending threshold per distinct score
    tp = np.rint(tpr[1:] * positives)
    fp = np.rint(fpr[1:] * negatives)
    thresholds = thresholds[1:]
    precision = tp / (tp + fp)
    recall = tp / positives
    denominator = precision + recall
    f1 = np.divide(
        2 * precision * recall, denominator, out=np.zeros_like(denominator), where=denominator > 0
    )
    # lexsort keys: last is primary
    best = np.lexsort((thresholds, -precision, -f1))[0]
    return float(f1[best]), float(precision[best]), float(recall[best]), float(thresholds[best])


def f1_at_threshold(series: ScoreSeries, threshold: float) -> float:
    """F1 when flagging scores >= ``threshold``; 0 when nothing is flagged."""
    _require_both_classes(series)
    flagged = (series.scores >= threshold).astype(np.int64)
    return float(f1_score(series.labels, flagged, zero_division=0))


def evaluate_scores(series: ScoreSeries) -> EvalReport:
    """AUC plus best-F1 operating point."""
    auc, roc = roc_auc(series)
    f1, precision, recall, threshold = best_f1(series)
    return EvalReport(
        auc=auc,
        best_f1=f1,
        precision=precision,
        recall=recall,
        threshold=threshold,
        n_samples=len(series),
        n_anomalies=int(series.labels.sum()),
        roc=roc,
    )
