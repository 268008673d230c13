"""Dataset schema and normalization models."""

import json
from enum import Enum
from pathlib import Path

from pydantic import BaseModel, Field, ValidationError, model_validator

from bissm.core.exceptions import ConfigError


class ColumnKind(str, Enum):
    """How a control column is preprocessed."""

    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


class ControlColumn(BaseModel):
    """A control (actuator) column and its type."""

    name: str
    kind: ColumnKind = ColumnKind.CONTINUOUS


class DatasetSchema(BaseModel):
    """Column roles and windowing parameters for a CSV dataset.

    Attributes:
        time_column: Monotone time index column (row number when omitted)
        signals: Signal (sensor) columns, the x^(t) variables
        controls: Control columns, the u^(t) variables
        label_column: Binary anomaly label column, absent for normal-only data
        label_map: Maps textual labels such as "Attack" to 0/1
        drop_columns: Columns ignored even when present in the file
        xl: Signal window length
        ul: Control window length
        downsample: Keep one row out of every ``downsample``
    """

    time_column: str | None = None
    signals: list[str] = Field(min_length=1)
    controls: list[ControlColumn] = Field(default_factory=list)
    label_column: str | None = None
    label_map: dict[str, int] | None = None
    drop_columns: list[str] = Field(default_factory=list)
    xl: int = Field(default=8, ge=1)
    ul: int = Field(default=16, ge=1)
    downsample: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_columns(self) -> "DatasetSchema":
        names = self.signals + [c.name for c in self.controls]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValueError(f"columns declared more than once: {duplicates}")
        dropped = sorted(set(names) & set(self.drop_columns))
        if dropped:
            raise ValueError(f"columns both used and dropped: {dropped}")
        if self.label_map is not None and set(self.label_map.values()) - {0, 1}:
            raise ValueError("label_map values must be 0 or 1")
        return self

    @property
    def control_names(self) -> list[str]:
        return [c.name for c in self.controls]

    @property
    def control_kinds(self) -> dict[str, ColumnKind]:
        return {c.name: c.kind for c in self.controls}

    @classmethod
    def load(cls, path: Path) -> "DatasetSchema":
        """Load a schema from a JSON file.

        Raises:
            ConfigError: If the file is missing or invalid
        """
        try:
            return cls.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise ConfigError(
                code="SCHEMA_NOT_FOUND",
                message=f"Schema file '{path}' not found",
                details={"path": str(path)},
            )
        except (json.JSONDecodeError, ValidationError) as e:
            raise ConfigError(
                code="INVALID_SCHEMA",
                message=f"Invalid schema file '{path}': {e}",
                details={"path": str(path), "error": str(e)},
            )


class NormalizationSpec(BaseModel):
    """Preprocessing parameters fitted on training data.

    Attributes:
        ranges: Per continuous column, (min, max) seen in training
        categories: Per discrete column, the ordered one-hot categories
    """

    ranges: dict[str, tuple[float, float]] = Field(default_factory=dict)
    categories: dict[str, list[str]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "NormalizationSpec":
        for name, (low, high) in self.ranges.items():
            if high < low:
                raise ValueError(f"column '{name}': max {high} < min {low}")
        for name, cats in self.categories.items():
            if len(set(cats)) != len(cats):
                raise ValueError(f"column '{name}': categories are not unique")
        return self
