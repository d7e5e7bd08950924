# ABOUTME: Common utility functions for atomic file operations and CSV/JSON handling.
# ABOUTME: Provides safe writes plus matrix, key-value and table serialization.
"""Utility functions for staci"""

import io
import json
import logging
import os
import tempfile
from contextlib import suppress
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from staci.exceptions import DataError

logger = logging.getLogger(__name__)


def atomic_write(filepath: Path, content: str, mode: str = "w") -> None:
    """
    Write file atomically to prevent data corruption.

    Args:
        filepath: Target file path
        content: Content to write
        mode: File mode ('w' or 'wb')

    Raises:
        DataError: If write fails
    """
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)

    # Create temp file in same directory (for same filesystem)
    temp_fd, temp_path = tempfile.mkstemp(
        dir=filepath.parent, prefix=f".{filepath.name}.", suffix=".tmp"
    )

    try:
        with os.fdopen(temp_fd, mode) as f:
            f.write(content)
            f.flush()
            os.fsync(f.fileno())

        os.replace(temp_path, filepath)

    except Exception as e:
        with suppress(OSError):
            os.unlink(temp_path)
        raise DataError(
            f"Failed to write {filepath}: {e}",
            recovery_hint="Check disk space and permissions",
        ) from e


def atomic_json_write(filepath: Path, data: Any, **json_kwargs) -> None:
    """Write JSON file atomically."""
    json_kwargs.setdefault("indent", 2)
    json_kwargs.setdefault("sort_keys", True)

    content = json.dumps(data, **json_kwargs) + "\n"
    atomic_write(filepath, content)


def write_table_csv(filepath: Path, frame: pd.DataFrame) -> None:
    """Write a DataFrame as CSV (no index) atomically."""
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator="\n")
    atomic_write(filepath, buffer.getvalue())


def write_matrix_csv(filepath: Path, matrix: np.ndarray) -> None:
    """Write a 2-D array as headerless CSV with round-trip float precision."""
    buffer = io.StringIO()
    np.savetxt(buffer, np.atleast_2d(np.asarray(matrix, dtype=float)), fmt="%.17g", delimiter=",")
    atomic_write(filepath, buffer.getvalue())


def read_matrix_csv(filepath: Path) -> np.ndarray:
    """Read a headerless numeric CSV into a 2-D float array."""
    filepath = Path(filepath)
    try:
        frame = pd.read_csv(filepath, header=None, dtype=float, float_precision="round_trip")
    except FileNotFoundError as e:
        raise DataError(f"Matrix file not found: {filepath}") from e
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Invalid matrix file {filepath}: {e}") from e
    return frame.to_numpy()


def write_key_values(filepath: Path, values: dict[str, float]) -> None:
    """Write a small key=value text file, one entry per line."""
    lines = [f"{key}={value!r}" for key, value in values.items()]
    atomic_write(filepath, "\n".join(lines) + "\n")


def read_key_values(filepath: Path) -> dict[str, float]:
    """Read a key=value text file written by write_key_values."""
    filepath = Path(filepath)
    try:
        text = filepath.read_text()
    except OSError as e:
        raise DataError(f"Failed to read {filepath}: {e}") from e

    values: dict[str, float] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise DataError(f"{filepath}:{lineno}: expected key=value, got {line!r}")
        try:
            values[key.strip()] = float(raw)
        except ValueError as e:
            raise DataError(
                f"{filepath}:{lineno}: value for {key.strip()!r} is not a number"
            ) from e
    return values
