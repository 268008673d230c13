"""Atomic file storage operations."""

import contextlib
import json
import os
from collections.abc import Callable
from pathlib import Path
from typing import IO, Any

import pandas as pd

from bissm.core.exceptions import PersistenceError

CSV_FLOAT_FORMAT = "%.17g"


def _atomic(path: Path, write: Callable[[IO[str]], None]) -> None:
    """Run ``write`` against a temp file, then rename it over ``path``.

    The file is either fully written or not written at all.
    """
    path.parent.mkdir(parents=True, exist_ok=True)

    temp_path = path.with_suffix(path.suffix + ".tmp")

    try:
        with open(temp_path, "w", encoding="utf-8", newline="") as f:
            write(f)
            f.flush()
            # Ensure data is written to disk
            os.fsync(f.fileno())

        # Atomic rename (on POSIX systems)
        os.replace(temp_path, path)

    except Exception as e:
        # Cleanup temp file on error
        with contextlib.suppress(FileNotFoundError):
            os.remove(temp_path)

        raise PersistenceError(
            code="WRITE_FAILED",
            message=f"Failed to write {path}: {e}",
            details={"path": str(path), "error": str(e)},
        )


def atomic_write(path: Path, data: dict[str, Any]) -> None:
    """Write JSON data atomically using temp file + rename.

    Args:
        path: Target file path
        data: Dictionary to serialize as JSON
    """
    _atomic(path, lambda f: f.write(json.dumps(data, indent=2, default=str)))


def atomic_write_text(path: Path, content: str) -> None:
    """Write plain text atomically."""
    _atomic(path, lambda f: f.write(content))


def atomic_write_csv(path: Path, frame: pd.DataFrame) -> None:
    """Write a DataFrame as CSV atomically, floats in round-trip precision."""
    _atomic(path, lambda f: frame.to_csv(f, index=False, float_format=CSV_FLOAT_FORMAT))


def safe_read(path: Path) -> dict[str, Any] | None:
    """Read JSON data, returning None if file doesn't exist.

    Args:
        path: File path to read

    Returns:
        Parsed JSON data or None if file doesn't exist
    """
    try:
        with open(path, encoding="utf-8") as f:
            data: dict[str, Any] = json.load(f)
            return data
    except FileNotFoundError:
        return None
    except json.JSONDecodeError as e:
        raise PersistenceError(
            code="INVALID_JSON",
            message=f"Invalid JSON in {path}: {e}",
            details={"path": str(path), "error": str(e)},
        )
