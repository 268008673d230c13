"""Tests for CSV ingestion, preprocessing, windowing and the synthetic generator."""

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from bissm.core.exceptions import (
    ConfigError,
    CsvFormatError,
    DataError,
    MissingColumnError,
    SeriesTooShortError,
)
from bissm.data.frame import (
    TimeSeriesFrame,
    control_transition_mask,
    downsample,
    load_csv,
    write_csv,
)
from bissm.data.normalization import apply_normalization, fit_normalization
from bissm.data.synthetic import (
    SYNTHETIC_SCHEMA,
    periodic_anomalies,
    staircase_control,
    synth_generate,
)
from bissm.data.windows import make_windows, split_train_val
from bissm.models.schema import ColumnKind, ControlColumn, DatasetSchema

SCHEMA = DatasetSchema(
    time_column="t",
    signals=["x"],
    controls=[ControlColumn(name="u")],
    label_column="label",
)


def _frame(signal, control=None, labels=None, kinds=None) -> TimeSeriesFrame:
    n = len(signal)
    control = np.zeros(n) if control is None else control
    return TimeSeriesFrame(
        time=np.arange(1, n + 1),
        signals=pd.DataFrame({"x": np.asarray(signal, dtype=float)}),
        controls=pd.DataFrame({"u": control}),
        control_kinds=kinds or {"u": ColumnKind.CONTINUOUS},
        labels=None if labels is None else np.asarray(labels, dtype=np.int64),
    )


class TestLoadCsv:
    """Tests for CSV parsing."""

    def test_three_rows(self, tmp_path: Path) -> None:
        path = tmp_path / "data.csv"
        path.write_text("t,x,u,label\n1,0.5,1,0\n2,0.25,1,0\n3,1.5,2,1\n")

        frame = load_csv(path, SCHEMA)

        assert len(frame) == 3
        np.testing.assert_array_equal(frame.signals["x"], [0.5, 0.25, 1.5])
        np.testing.assert_array_equal(frame.labels, [0, 0, 1])
        np.testing.assert_array_equal(frame.time, [1, 2, 3])

    def test_missing_column_named(self, tmp_path: Path) -> None:
        path = tmp_path / "data.csv"
        path.write_text("t,x,label\n1,0.5,0\n")

        with pytest.raises(MissingColumnError) as exc_info:
            load_csv(path, SCHEMA)

        assert exc_info.value.details["column"] == "u"

    def test_unparseable_value_reports_row(self, tmp_path: Path) -> None:
        """Row numbers count the header as row 1."""
        path = tmp_path / "data.csv"
        path.write_text("t,x,u,label\n1,0.5,1,0\n2,abc,1,0\n")

        with pytest.raises(CsvFormatError) as exc_info:
            load_csv(path, SCHEMA)

        assert exc_info.value.details["row"] == 3

    def test_short_row_reports_row(self, tmp_path: Path) -> None:
        path = tmp_path / "data.csv"
        path.write_text("t,x,u,label\n1,0.5,1,0\n2,0.5\n")

        with pytest.raises(CsvFormatError) as exc_info:
            load_csv(path, SCHEMA)

        assert exc_info.value.details["row"] == 3

    def test_textual_labels_and_padded_headers(self, tmp_path: Path) -> None:
        """Header whitespace is stripped and mapped labels are applied."""
        schema = DatasetSchema(
            time_column="Timestamp",
            signals=["FIT101"],
            controls=[ControlColumn(name="MV101", kind=ColumnKind.DISCRETE)],
            label_column="Normal/Attack",
            label_map={"Normal": 0, "Attack": 1},
            drop_columns=["AIT201"],
        )
        path = tmp_path / "swat.csv"
        path.write_text(
            " Timestamp, FIT101, AIT201, MV101,Normal/Attack\n"
            "a,1.0,9,1,Normal\n"
            "b,2.0,9,2,Attack\n"
        )

        frame = load_csv(path, schema)

        np.testing.assert_array_equal(frame.labels, [0, 1])
        assert frame.control_columns == ["MV101"]
        assert list(frame.controls["MV101"]) == ["1", "2"]

    def test_unknown_label(self, tmp_path: Path) -> None:
        path = tmp_path / "data.csv"
        path.write_text("t,x,u,label\n1,0.5,1,2\n")

        with pytest.raises(CsvFormatError):
            load_csv(path, SCHEMA)

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(DataError):
            load_csv(tmp_path / "absent.csv", SCHEMA)

    def test_write_then_load_is_identity(self, tmp_path: Path, rng) -> None:
        frame = _frame(rng.normal(size=20), rng.normal(size=20), rng.integers(0, 2, 20))
        path = tmp_path / "out.csv"

        write_csv(frame, path, SCHEMA)
        loaded = load_csv(path, SCHEMA)

        np.testing.assert_array_equal(loaded.signals["x"], frame.signals["x"])
        np.testing.assert_array_equal(loaded.controls["u"], frame.controls["u"])
        np.testing.assert_array_equal(loaded.labels, frame.labels)

    def test_full_precision_text_parses_exactly(self, tmp_path: Path, rng) -> None:
        values = rng.normal(size=2000)
        path = tmp_path / "data.csv"
        rows = "".join(f"{i},{v:.17g},{-v:.17g},0\n" for i, v in enumerate(values, start=1))
        path.write_text("t,x,u,label\n" + rows)

        frame = load_csv(path, SCHEMA)

        np.testing.assert_array_equal(frame.signals["x"].to_numpy(), values)
        np.testing.assert_array_equal(frame.controls["u"].to_numpy(), -values)

    def test_non_finite_value_reports_row(self, tmp_path: Path) -> None:
        path = tmp_path / "data.csv"
        path.write_text("t,x,u,label\n1,0.5,1,0\n2,0.5,1,0\n3,inf,1,0\n")

        with pytest.raises(CsvFormatError) as exc_info:
            load_csv(path, SCHEMA)

        assert exc_info.value.details["row"] == 4


class TestSchema:
    """Tests for schema validation and loading."""

    def test_column_used_and_dropped(self) -> None:
        with pytest.raises(ValueError):
            DatasetSchema(signals=["x"], drop_columns=["x"])

    def test_load_missing(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError) as exc_info:
            DatasetSchema.load(tmp_path / "none.json")

        assert exc_info.value.code == "SCHEMA_NOT_FOUND"

    def test_load_file(self, synthetic_schema_file: Path) -> None:
        schema = DatasetSchema.load(synthetic_schema_file)

        assert schema.xl == 8
        assert schema.ul == 16

    def test_bundled_swat_schema(self) -> None:
        schema = DatasetSchema.load(Path(__file__).parents[2] / "schemas" / "swat.json")

        assert len(schema.signals) == 11
        assert len(schema.controls) == 25
        assert (schema.xl, schema.ul, schema.downsample) == (16, 32, 5)

    def test_bundled_wadi_schema(self) -> None:
        schema = DatasetSchema.load(Path(__file__).parents[2] / "schemas" / "wadi.json")

        assert len(schema.signals) == 53
        assert len(schema.controls) == 26
        assert all(c.kind is ColumnKind.DISCRETE for c in schema.controls)
        assert len(schema.drop_columns) == 14
        assert all(name.endswith("_PV") for name in schema.drop_columns)
        assert (schema.xl, schema.ul, schema.downsample) == (8, 16, 5)

    def test_wadi_labels_and_dropped_sensor(self, tmp_path: Path) -> None:
        schema = DatasetSchema.load(Path(__file__).parents[2] / "schemas" / "wadi.json")
        header = ["Row", "Date", "Time", "1_AIT_001_PV", *schema.signals, *schema.control_names]
        header.append(f'"{schema.label_column}"')
        rows = [
            [str(i), "10/9/2017", "6:00:00 PM", "x", *["0.5"] * 53, *["1"] * 26, label]
            for i, label in ((1, "1"), (2, "-1"))
        ]
        path = tmp_path / "wadi.csv"
        path.write_text("\n".join(",".join(r) for r in [header, *rows]) + "\n")

        frame = load_csv(path, schema)

        np.testing.assert_array_equal(frame.labels, [0, 1])
        assert "1_AIT_001_PV" not in frame.signal_columns
        assert len(frame.signal_columns) == 53


class TestDownsample:
    """Tests for row decimation."""

    def test_factor_one_is_identity(self) -> None:
        frame = _frame(np.arange(4.0))

        assert downsample(frame, 1) is frame

    def test_length_and_labels(self) -> None:
        labels = [0, 0, 0, 1, 0, 0, 0, 0, 0, 0]

        result = downsample(_frame(np.arange(10.0), labels=labels), 5)

        assert len(result) == 2
        np.testing.assert_array_equal(result.signals["x"], [0.0, 5.0])
        np.testing.assert_array_equal(result.labels, [1, 0])

    def test_invalid_factor(self) -> None:
        with pytest.raises(DataError):
            downsample(_frame(np.arange(3.0)), 0)


class TestNormalization:
    """Tests for min-max scaling and one-hot encoding."""

    def test_min_max(self) -> None:
        frame = _frame([0.0, 5.0, 10.0], control=np.array([7.0, 7.0, 7.0]))

        result = apply_normalization(frame, fit_normalization(frame))

        np.testing.assert_array_equal(result.signals["x"], [0.0, 0.5, 1.0])
        np.testing.assert_array_equal(result.controls["u"], [0.0, 0.0, 0.0])

    def test_no_clamping(self) -> None:
        spec = fit_normalization(_frame([0.0, 10.0]))

        result = apply_normalization(_frame([20.0]), spec)

        assert result.signals["x"].iloc[0] == 2.0

    def test_one_hot_with_unseen_category(self) -> None:
        kinds = {"u": ColumnKind.DISCRETE}
        train = _frame([0.0, 1.0, 2.0], control=np.array(["1", "2", "1"], dtype=object), kinds=kinds)
        test = _frame([0.0, 1.0], control=np.array(["2", "3"], dtype=object), kinds=kinds)

        result = apply_normalization(test, fit_normalization(train))

        assert result.control_columns == ["u=1", "u=2"]
        np.testing.assert_array_equal(result.union_values()[:, 1:], [[0.0, 1.0], [0.0, 0.0]])


class TestWindows:
    """Tests for sliding windows and the chronological split."""

    def test_window_count(self) -> None:
        frame = _frame(np.zeros(10000))

        windows = make_windows(frame, xl=8, ul=8)

        assert len(windows) == 9993

    def test_alignment_to_longest_window(self) -> None:
        frame = _frame(np.arange(100.0))

        windows = make_windows(frame, xl=16, ul=32)

        assert windows.end_times[0] == 32
        assert len(windows) == 100 - 32 + 1
        np.testing.assert_array_equal(windows.signals[0, :, 0], np.arange(16.0, 32.0))
        assert windows.controls.shape == (69, 32, 2)

    def test_window_label_is_last_point(self) -> None:
        labels = np.zeros(10, dtype=np.int64)
        labels[5] = 1

        windows = make_windows(_frame(np.zeros(10), labels=labels), xl=3, ul=3)

        np.testing.assert_array_equal(windows.labels, [0, 0, 0, 1, 0, 0, 0, 0])

    def test_too_short(self) -> None:
        with pytest.raises(SeriesTooShortError):
            make_windows(_frame(np.zeros(5)), xl=8, ul=4)

    def test_flat_is_time_major(self) -> None:
        frame = TimeSeriesFrame(
            time=np.arange(1, 4),
            signals=pd.DataFrame({"a": [1.0, 2.0, 3.0], "b": [10.0, 20.0, 30.0]}),
            controls=pd.DataFrame(index=range(3)),
            control_kinds={},
        )

        windows = make_windows(frame, xl=2, ul=1)

        np.testing.assert_array_equal(windows.signal_flat()[0], [1.0, 10.0, 2.0, 20.0])

    @pytest.mark.parametrize(("count", "expected"), [(100, (75, 25)), (4, (3, 1))])
    def test_split(self, count: int, expected: tuple[int, int]) -> None:
        windows = make_windows(_frame(np.arange(count + 2.0)), xl=3, ul=3)

        train, val = split_train_val(windows)

        assert (len(train), len(val)) == expected
        assert train.end_times[-1] + 1 == val.end_times[0]

    def test_split_with_empty_side(self) -> None:
        windows = make_windows(_frame(np.arange(3.0)), xl=3, ul=3)

        with pytest.raises(DataError):
            split_train_val(windows)


class TestSynthetic:
    """Tests for the synthetic generator."""

    def test_staircase(self) -> None:
        np.testing.assert_array_equal(
            staircase_control(np.array([1, 100, 101, 1000, 1001])), [1, 1, 2, 10, 1]
        )

    def test_noiseless(self) -> None:
        series = synth_generate(50, 0.0, 0.0)
        t = np.arange(1, 51)

        np.testing.assert_allclose(
            series.frame.signals["x"], np.sin(t - 1.0) + np.sin(staircase_control(t)), atol=0
        )

    def test_same_seed_same_series(self) -> None:
        first = synth_generate(200, 0.5, 1.0, seed=9)
        second = synth_generate(200, 0.5, 1.0, seed=9)

        np.testing.assert_array_equal(first.frame.signals["x"], second.frame.signals["x"])

    def test_anomaly_labels(self) -> None:
        """The last 100 of every 1000 samples are labeled anomalous."""
        series = synth_generate(3000, 0.5, 1.0, anomalies=periodic_anomalies(3000))

        labels = series.frame.labels
        assert labels.sum() == 300
        assert labels[899] == 0
        assert labels[900:1000].all()
        np.testing.assert_array_equal(series.ground_truth.labels, labels)

    def test_ground_truth_is_noiseless(self) -> None:
        series = synth_generate(20, 0.5, 1.0, seed=2)

        clean = synth_generate(20, 0.0, 0.0).frame.signals["x"]
        np.testing.assert_array_equal(series.ground_truth.signals["x"], clean)

    def test_schema_matches_frame(self) -> None:
        series = synth_generate(5, 0.5, 1.0)

        assert series.frame.signal_columns == SYNTHETIC_SCHEMA.signals
        assert series.frame.control_columns == SYNTHETIC_SCHEMA.control_names


class TestTransitionMask:
    """Tests for control-change neighbourhoods."""

    def test_marks_rows_around_change(self) -> None:
        control = np.array([1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0])

        mask = control_transition_mask(_frame(np.zeros(8), control=control), radius=2)

        np.testing.assert_array_equal(mask, [False, False, True, True, True, True, False, False])
