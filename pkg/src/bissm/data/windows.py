"""Sliding windows over a normalized frame and the chronological split."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from bissm.core.exceptions import DataError, SeriesTooShortError
from bissm.data.frame import TimeSeriesFrame

DEFAULT_TRAIN_FRACTION = 0.75


@dataclass(frozen=True, eq=False)
class WindowedDataset:
    """Signal and control windows sharing end times.

    Attributes:
        signals: (N, xl, d_x) signal windows x_t
        controls: (N, ul, d_x + d_u) windows over the union of signal and
            control columns, the u_t the transitions consume
        labels: (N,) label of each window's final time step
        end_times: (N,) time index at which each window ends
        signal_columns: Names of the d_x signal columns
        control_columns: Names of the d_x + d_u union columns
    """

    signals: NDArray[np.float64]
    controls: NDArray[np.float64]
    labels: NDArray[np.int64]
    end_times: np.ndarray
    signal_columns: tuple[str, ...]
    control_columns: tuple[str, ...]

    def __len__(self) -> int:
        return int(self.signals.shape[0])

    @property
    def xl(self) -> int:
        return int(self.signals.shape[1])

    @property
    def ul(self) -> int:
        return int(self.controls.shape[1])

    @property
    def signal_dim(self) -> int:
        return int(self.signals.shape[2])

    @property
    def control_dim(self) -> int:
        return int(self.controls.shape[2])

    def signal_flat(self) -> NDArray[np.float64]:
        """(N, xl * d_x) windows flattened time-major."""
        return self.signals.reshape(len(self), -1)

    def subset(self, start: int, stop: int) -> WindowedDataset:
        return replace(
            self,
            signals=self.signals[start:stop],
            controls=self.controls[start:stop],
            labels=self.labels[start:stop],
            end_times=self.end_times[start:stop],
        )


def _windows(values: NDArray[np.float64], length: int, ends: NDArray[np.int64]) -> NDArray[np.float64]:
    # sliding_window_view yields (tau - length + 1, dim, length)
    view = np.lib.stride_tricks.sliding_window_view(values, length, axis=0)
    return np.ascontiguousarray(view[ends - length + 1].transpose(0, 2, 1))


def make_windows(frame: TimeSeriesFrame, xl: int, ul: int, stride: int = 1) -> WindowedDataset:
    """Cut a normalized frame into aligned signal/control windows.

    Window k ends at row ``max(xl, ul) - 1 + k * stride``; its label is the
    label of that row.

    Raises:
        SeriesTooShortError: If the frame is shorter than the longest window
    """
    if xl < 1 or ul < 1 or stride < 1:
        raise DataError(
            code="INVALID_WINDOW",
            message=f"Window lengths and stride must be >= 1 (xl={xl}, ul={ul}, stride={stride})",
            details={"xl": xl, "ul": ul, "stride": stride},
        )
    longest = max(xl, ul)
    if len(frame) < longest:
        raise SeriesTooShortError(longest, len(frame))

    ends = np.arange(longest - 1, len(frame), stride, dtype=np.int64)
    signal_values = frame.signals.to_numpy(dtype=np.float64)
    union_values = frame.union_values()
    labels = (
        np.zeros(len(ends), dtype=np.int64) if frame.labels is None else frame.labels[ends]
    )
    return WindowedDataset(
        signals=_windows(signal_values, xl, ends),
        controls=_windows(union_values, ul, ends),
        labels=labels,
        end_times=frame.time[ends],
        signal_columns=tuple(frame.signal_columns),
        control_columns=tuple(frame.signal_columns + frame.control_columns),
    )


def split_train_val(
    windows: WindowedDataset, fraction: float = DEFAULT_TRAIN_FRACTION
) -> tuple[WindowedDataset, WindowedDataset]:
    """First ``fraction`` of the windows (by time) for training, the rest for validation."""
    n_train = int(np.floor(len(windows) * fraction))
    if n_train == 0 or n_train == len(windows):
        raise DataError(
            code="EMPTY_SPLIT",
            message=f"Splitting {len(windows)} windows at {fraction} leaves one side empty",
            details={"windows": len(windows), "fraction": fraction},
        )
    return windows.subset(0, n_train), windows.subset(n_train, len(windows))
