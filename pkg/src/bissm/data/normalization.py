"""Min-max scaling of continuous columns and one-hot encoding of discrete ones."""

import numpy as np
import pandas as pd

from bissm.data.frame import TimeSeriesFrame
from bissm.models.schema import ColumnKind, NormalizationSpec


def fit_normalization(train: TimeSeriesFrame) -> NormalizationSpec:
    """Fit ranges and categories on the training frame only."""
    ranges: dict[str, tuple[float, float]] = {}
    categories: dict[str, list[str]] = {}
    for column in train.signal_columns:
        values = train.signals[column].to_numpy(dtype=np.float64)
        ranges[column] = (float(values.min()), float(values.max()))
    for column in train.control_columns:
        if train.control_kinds.get(column, ColumnKind.CONTINUOUS) is ColumnKind.DISCRETE:
            categories[column] = sorted({str(v) for v in train.controls[column]})
        else:
            values = train.controls[column].to_numpy(dtype=np.float64)
            ranges[column] = (float(values.min()), float(values.max()))
    return NormalizationSpec(ranges=ranges, categories=categories)


def _scale(values: np.ndarray, low: float, high: float) -> np.ndarray:
    # Constant columns map to 0; test values outside the range are not clamped
    if high == low:
        return np.zeros(len(values), dtype=np.float64)
    return (np.asarray(values, dtype=np.float64) - low) / (high - low)


def apply_normalization(frame: TimeSeriesFrame, spec: NormalizationSpec) -> TimeSeriesFrame:
    """Return a new frame with scaled signals and expanded controls.

    Discrete column ``c`` becomes columns ``c=<category>`` in category order;
    categories unseen during fitting encode as all zeros. Every control column
    of the result is continuous.
    """
    signals = pd.DataFrame(
        {c: _scale(frame.signals[c].to_numpy(), *spec.ranges[c]) for c in frame.signal_columns}
    )
    controls: dict[str, np.ndarray] = {}
    for column in frame.control_columns:
        if column in spec.categories:
            values = frame.controls[column].astype(str).to_numpy()
            for category in spec.categories[column]:
                controls[f"{column}={category}"] = (values == category).astype(np.float64)
        else:
            controls[column] = _scale(frame.controls[column].to_numpy(), *spec.ranges[column])
    control_frame = pd.DataFrame(controls, index=signals.index)
    return TimeSeriesFrame(
        time=frame.time,
        signals=signals,
        controls=control_frame,
        control_kinds={c: ColumnKind.CONTINUOUS for c in control_frame.columns},
        labels=frame.labels,
    )
