"""Synthetic control/state/observation generator.

For t = 1..T the control is a staircase repeating every 1000 steps,
``u = ceil((t - 1000 * floor((t - 1) / 1000)) / 100)``, the state is
``s = sin(t - 1) + sin(u) + w`` and the observation ``x = s + v``. Noise
scales are standard deviations.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import pandas as pd

from bissm.data.frame import TimeSeriesFrame
from bissm.models.schema import ColumnKind, ControlColumn, DatasetSchema

NORMAL_SIGMA_W = 0.5
NORMAL_SIGMA_V = 1.0
ANOMALY_SIGMA_W = 1.0
ANOMALY_SIGMA_V = 2.0
LOW_NOISE_SIGMA = 0.1
BLOCK_PERIOD = 1000
STEP_LENGTH = 100
ANOMALY_LENGTH = 100

SYNTHETIC_SCHEMA = DatasetSchema(
    time_column="time",
    signals=["x"],
    controls=[ControlColumn(name="u", kind=ColumnKind.CONTINUOUS)],
    label_column="label",
    xl=8,
    ul=16,
)


@dataclass(frozen=True)
class AnomalyRange:
    """Inclusive 1-based time range with overridden noise scales, labeled 1."""

    start: int
    stop: int
    sigma_w: float = ANOMALY_SIGMA_W
    sigma_v: float = ANOMALY_SIGMA_V


@dataclass(frozen=True, eq=False)
class SyntheticSeries:
    """A noisy series and its noiseless counterpart (w = v = 0)."""

    frame: TimeSeriesFrame
    ground_truth: TimeSeriesFrame


def periodic_anomalies(
    length: int,
    period: int = BLOCK_PERIOD,
    anomaly_length: int = ANOMALY_LENGTH,
    sigma_w: float = ANOMALY_SIGMA_W,
    sigma_v: float = ANOMALY_SIGMA_V,
) -> list[AnomalyRange]:
    """The last ``anomaly_length`` samples of every complete ``period`` block."""
    return [
        AnomalyRange(start=end - anomaly_length + 1, stop=end, sigma_w=sigma_w, sigma_v=sigma_v)
        for end in range(period, length + 1, period)
    ]


def staircase_control(t: np.ndarray) -> np.ndarray:
    """Control value for 1-based times ``t``."""
    offset = t - BLOCK_PERIOD * ((t - 1) // BLOCK_PERIOD)
    return -(-offset // STEP_LENGTH)


def synth_generate(
    length: int,
    sigma_w: float,
    sigma_v: float,
    anomalies: Sequence[AnomalyRange] = (),
    seed: int = 0,
    stream: int = 0,
) -> SyntheticSeries:
    """Generate ``length`` samples; ``stream`` separates independent draws under one seed."""
    rng = np.random.default_rng([seed, stream])
    t = np.arange(1, length + 1, dtype=np.int64)
    u = staircase_control(t)

    scale_w = np.full(length, float(sigma_w))
    scale_v = np.full(length, float(sigma_v))
    labels = np.zeros(length, dtype=np.int64)
    for anomaly in anomalies:
        span = slice(max(anomaly.start, 1) - 1, min(anomaly.stop, length))
        scale_w[span] = anomaly.sigma_w
        scale_v[span] = anomaly.sigma_v
        labels[span] = 1

    w = rng.standard_normal(length) * scale_w
    v = rng.standard_normal(length) * scale_v
    clean = np.sin(t - 1.0) + np.sin(u.astype(np.float64))

    controls = pd.DataFrame({"u": u.astype(np.float64)})
    kinds = SYNTHETIC_SCHEMA.control_kinds
    return SyntheticSeries(
        frame=TimeSeriesFrame(
            time=t,
            signals=pd.DataFrame({"x": clean + w + v}),
            controls=controls,
            control_kinds=kinds,
            labels=labels,
        ),
        ground_truth=TimeSeriesFrame(
            time=t,
            signals=pd.DataFrame({"x": clean}),
            controls=controls.copy(),
            control_kinds=kinds,
            labels=labels.copy(),
        ),
    )
