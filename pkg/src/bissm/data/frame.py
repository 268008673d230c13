"""Time series frames: CSV ingestion, export and downsampling."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from bissm.core.exceptions import (
    CsvFormatError,
    DataError,
    MissingColumnError,
)
from bissm.models.schema import ColumnKind, DatasetSchema
from bissm.persistence.storage import atomic_write_csv

logger = logging.getLogger(__name__)

DEFAULT_TIME_COLUMN = "time"


@dataclass(frozen=True, eq=False)
class TimeSeriesFrame:
    """Aligned signal, control and label series of one length.

    Attributes:
        time: Monotone time index, one entry per row
        signals: Signal columns (float)
        controls: Control columns; discrete ones hold category strings
        control_kinds: Kind of every control column
        labels: Binary labels, or None for unlabeled data
    """

    time: NDArray[np.int64] | NDArray[np.object_]
    signals: pd.DataFrame
    controls: pd.DataFrame
    control_kinds: dict[str, ColumnKind]
    labels: NDArray[np.int64] | None = None

    def __post_init__(self) -> None:
        lengths = {len(self.time), len(self.signals), len(self.controls)}
        if self.labels is not None:
            lengths.add(len(self.labels))
        if len(lengths) != 1:
            raise DataError(
                code="RAGGED_FRAME",
                message=f"Frame columns have different lengths: {sorted(lengths)}",
                details={"lengths": sorted(lengths)},
            )
        if self.labels is not None and not np.isin(self.labels, (0, 1)).all():
            raise DataError(
                code="NON_BINARY_LABELS",
                message="Labels must be 0 or 1",
                details={"values": sorted({int(v) for v in np.unique(self.labels)})},
            )

    def __len__(self) -> int:
        return len(self.time)

    @property
    def signal_columns(self) -> list[str]:
        return [str(c) for c in self.signals.columns]

    @property
    def control_columns(self) -> list[str]:
        return [str(c) for c in self.controls.columns]

    def union_values(self) -> NDArray[np.float64]:
        """Signals followed by controls as one float matrix (controls must be numeric)."""
        return np.hstack(
            [self.signals.to_numpy(dtype=np.float64), self.controls.to_numpy(dtype=np.float64)]
        )

    def rows(self, index: NDArray[np.int64]) -> TimeSeriesFrame:
        return replace(
            self,
            time=self.time[index],
            signals=self.signals.iloc[index].reset_index(drop=True),
            controls=self.controls.iloc[index].reset_index(drop=True),
            labels=None if self.labels is None else self.labels[index],
        )


_PARSER_LINE = re.compile(r"line (\d+)")


def load_csv(path: Path, schema: DatasetSchema) -> TimeSeriesFrame:
    """Parse a CSV file into a frame, keeping rows in file order.

    Header names are stripped of surrounding whitespace. Row numbers in errors
    count the header as row 1.

    Raises:
        MissingColumnError: If a declared column is absent
        CsvFormatError: If a row is ragged or a value is not a number
    """
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise DataError(
            code="CSV_NOT_FOUND",
            message=f"CSV file '{path}' not found",
            details={"path": str(path)},
        )
    except pd.errors.ParserError as e:
        match = _PARSER_LINE.search(str(e))
        raise CsvFormatError(str(path), int(match.group(1)) if match else -1, "ragged row")
    raw = raw.fillna("")
    raw.columns = [str(c).strip() for c in raw.columns]
    raw = raw.drop(columns=[c for c in schema.drop_columns if c in raw.columns])

    required = list(schema.signals) + schema.control_names
    for optional in (schema.time_column, schema.label_column):
        if optional is not None:
            required.append(optional)
    for column in required:
        if column not in raw.columns:
            raise MissingColumnError(str(path), column)

    # Fewer fields than the header leaves empty cells
    for column in required:
        empty = (raw[column].str.strip() == "").to_numpy()
        if empty.any():
            raise CsvFormatError(str(path), int(np.argmax(empty)) + 2, f"missing value in '{column}'")

    def numeric(column: str) -> NDArray[np.float64]:
        stripped = raw[column].str.strip()
        try:
            # astype parses with correct rounding; to_numeric does not
            values = stripped.astype(np.float64).to_numpy()
        except ValueError:
            values = pd.to_numeric(stripped, errors="coerce").to_numpy(dtype=np.float64)
        bad = ~np.isfinite(values)
        if bad.any():
            row = int(np.argmax(bad))
            raise CsvFormatError(
                str(path), row + 2, f"cannot parse '{raw[column].iloc[row]}' in '{column}' as float"
            )
        return values

    signals = pd.DataFrame({c: numeric(c) for c in schema.signals})
    controls = pd.DataFrame(
        {
            c.name: numeric(c.name)
            if c.kind is ColumnKind.CONTINUOUS
            else raw[c.name].str.strip().to_numpy(dtype=object)
            for c in schema.controls
        },
        index=signals.index,
    )

    if schema.time_column is not None:
        time_raw = raw[schema.time_column].str.strip()
        as_int = pd.to_numeric(time_raw, errors="coerce")
        time = (
            as_int.to_numpy(dtype=np.int64)
            if as_int.notna().all() and (as_int == as_int.round()).all()
            else time_raw.to_numpy(dtype=object)
        )
    else:
        time = np.arange(1, len(raw) + 1, dtype=np.int64)

    labels = None
    if schema.label_column is not None:
        labels = _parse_labels(path, raw[schema.label_column].str.strip(), schema)

    frame = TimeSeriesFrame(
        time=time,
        signals=signals,
        controls=controls,
        control_kinds=schema.control_kinds,
        labels=labels,
    )
    logger.debug(f"Loaded {len(frame)} rows from {path}")
    return frame


def _parse_labels(path: Path, column: pd.Series, schema: DatasetSchema) -> NDArray[np.int64]:
    if schema.label_map is not None:
        mapped = column.map(schema.label_map)
        if mapped.isna().any():
            row = int(np.argmax(mapped.isna().to_numpy()))
            raise CsvFormatError(str(path), row + 2, f"unknown label '{column.iloc[row]}'")
        return mapped.to_numpy(dtype=np.int64)
    values = pd.to_numeric(column, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isin(values, (0.0, 1.0))
    if bad.any():
        row = int(np.argmax(bad))
        raise CsvFormatError(str(path), row + 2, f"label '{column.iloc[row]}' is not 0 or 1")
    return values.astype(np.int64)


def write_csv(frame: TimeSeriesFrame, path: Path, schema: DatasetSchema) -> Path:
    """Write a frame with the column names of ``schema``; inverse of :func:`load_csv`."""
    data = {schema.time_column or DEFAULT_TIME_COLUMN: frame.time}
    for column in frame.signal_columns:
        data[column] = frame.signals[column].to_numpy()
    for column in frame.control_columns:
        data[column] = frame.controls[column].to_numpy()
    if frame.labels is not None:
        data[schema.label_column or "label"] = frame.labels
    atomic_write_csv(path, pd.DataFrame(data))
    return path


def downsample(frame: TimeSeriesFrame, factor: int) -> TimeSeriesFrame:
    """Keep every ``factor``-th row starting at row 0.

    A kept row is labeled anomalous if any row of the block it stands for is.
    """
    if factor < 1:
        raise DataError(
            code="INVALID_FACTOR",
            message=f"Downsample factor must be >= 1, got {factor}",
            details={"factor": factor},
        )
    if factor == 1:
        return frame
    kept = np.arange(0, len(frame), factor)
    result = frame.rows(kept)
    if frame.labels is not None:
        block_max = np.maximum.reduceat(frame.labels, kept)
        result = replace(result, labels=block_max.astype(np.int64))
    return result


def control_transition_mask(frame: TimeSeriesFrame, radius: int) -> NDArray[np.bool_]:
    """Mark rows within ``radius`` steps of a change in any control column."""
    mask = np.zeros(len(frame), dtype=bool)
    if not frame.control_columns or len(frame) < 2:
        return mask
    values = frame.controls.to_numpy()
    changed = np.flatnonzero((values[1:] != values[:-1]).any(axis=1)) + 1
    for index in changed:
        mask[max(0, index - radius) : index + radius] = True
    return mask
