"""Custom exception hierarchy for the anomaly detection pipeline."""

from typing import Any


class BissmError(Exception):
    """Base exception for all pipeline errors."""

    exit_code: int = 1

    def __init__(
        self,
        code: str,
        message: str,
        details: dict[str, Any] | None = None,
    ):
        self.code = code
        self.message = message
        self.details = details or {}
        super().__init__(message)


class ConfigError(BissmError):
    """Invalid run configuration or missing artifacts."""

    exit_code = 2


class MissingArtifactError(ConfigError):
    """A file required by a subcommand does not exist."""

    def __init__(self, path: str, hint: str):
        super().__init__(
            code="MISSING_ARTIFACT",
            message=f"Required file '{path}' not found; {hint}",
            details={"path": path, "hint": hint},
        )


class DataError(BissmError):
    """Input data is malformed or unsuitable."""

    exit_code = 3


class CsvFormatError(DataError):
    """A CSV row could not be parsed."""

    def __init__(self, path: str, row: int, reason: str):
        super().__init__(
            code="CSV_FORMAT",
            message=f"{path}: row {row}: {reason}",
            details={"path": path, "row": row, "reason": reason},
        )


class MissingColumnError(DataError):
    """A column declared in the schema is absent from the file."""

    def __init__(self, path: str, column: str):
        super().__init__(
            code="MISSING_COLUMN",
            message=f"{path}: declared column '{column}' not found in header",
            details={"path": path, "column": column},
        )


class SeriesTooShortError(DataError):
    """Not enough time steps or windows for the requested operation."""

    def __init__(self, required: int, available: int, what: str = "time steps"):
        super().__init__(
            code="SERIES_TOO_SHORT",
            message=f"Need at least {required} {what}, got {available}",
            details={"required": required, "available": available, "what": what},
        )


class SingleClassError(DataError):
    """A metric needs both normal and anomalous labels."""

    def __init__(self, present: int):
        super().__init__(
            code="SINGLE_CLASS",
            message=f"Metric requires both classes; only label {present} present",
            details={"present": present},
        )


class NumericError(BissmError):
    """Numerical failure inside the model, scoring or filtering code."""

    exit_code = 4


class ShapeMismatchError(NumericError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op: str, left: tuple[int, ...], right: tuple[int, ...]):
        super().__init__(
            code="SHAPE_MISMATCH",
            message=f"{op}: incompatible shapes {left} and {right}",
            details={"op": op, "left": list(left), "right": list(right)},
        )


class GradientError(NumericError):
    """Backward pass or optimizer invoked with invalid arguments."""

    pass


class NonFiniteError(NumericError):
    """A NaN or infinity appeared where finite values are required."""

    def __init__(self, what: str, index: int):
        super().__init__(
            code="NON_FINITE",
            message=f"Non-finite value in {what} at window {index}",
            details={"what": what, "index": index},
        )


class FactorizationError(NumericError):
    """Cholesky factorization failed even after jitter escalation."""

    def __init__(self, what: str, max_jitter: float):
        super().__init__(
            code="FACTORIZATION_FAILED",
            message=f"Cholesky of {what} failed with jitter up to {max_jitter:g}",
            details={"what": what, "max_jitter": max_jitter},
        )


class PersistenceError(BissmError):
    """Persistence layer errors."""

    exit_code = 3
