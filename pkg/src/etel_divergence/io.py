"""I/O helpers: load sample files, write JSON and CSV artifacts atomically."""

from __future__ import annotations

import hashlib
import json
from datetime import date, datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from etel_divergence.errors import EmptyValues

HEADER_NAMES = {"x"}

# ── Loading ──────────────────────────────────────────────────────


def _read_raw(path: Path) -> pd.DataFrame:
    last_exc: Exception | None = None
    for encoding in ("utf-8-sig", "utf-8", "latin-1"):
        try:
            return pd.read_csv(
                path,
                header=None,
                dtype="string",
                encoding=encoding,
                encoding_errors="strict",
                skip_blank_lines=True,
            )
        except pd.errors.EmptyDataError as exc:
            raise EmptyValues(f"Input file has no values: {path}") from exc
        except (UnicodeDecodeError, pd.errors.ParserError) as exc:
            last_exc = exc
        except OSError as exc:
            raise ValueError(f"Could not read CSV {path}: {exc}") from exc
    raise ValueError(f"Could not read CSV {path} (decode or parse failed)") from last_exc


def load_sample(path: Path) -> np.ndarray:
    """Load a single-column numeric CSV; an optional ``x`` header is skipped.

    Raises
    ------
    FileNotFoundError
        If *path* does not exist.
    ValueError
        If the file has several columns, no values, missing or
        non-numeric cells, or non-finite numbers.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Input file not found: {path}")
    if not path.is_file():
        raise ValueError(f"Input path is not a file: {path}")

    raw = _read_raw(path)
    if raw.shape[1] != 1:
        raise ValueError(f"Expected a single column in {path}, found {raw.shape[1]}")
    column = raw.iloc[:, 0].str.strip()
    if len(column) and str(column.iloc[0]).lower() in HEADER_NAMES:
        column = column.iloc[1:]
    if column.empty:
        raise EmptyValues(f"Input file has no values: {path}")
    if column.isna().any():
        row = int(column.isna().to_numpy().argmax()) + 1
        raise ValueError(f"Missing value in {path} (data row {row})")

    values = pd.to_numeric(column, errors="coerce")
    bad = values.isna()
    if bad.any():
        first = column[bad].iloc[0]
        raise ValueError(f"Non-numeric value {first!r} in {path}")
    arr = values.to_numpy(dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"Non-finite value in {path}")
    return arr


def sha256_file(path: Path) -> str:
    """Hex SHA-256 digest of *path*, recorded in run manifests."""
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        while chunk := fh.read(1 << 16):
            digest.update(chunk)
    return digest.hexdigest()


def utcnow_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


# ── Writing ──────────────────────────────────────────────────────


def _json_default(obj: Any) -> Any:
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (datetime, date)):
        return obj.isoformat()
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    item = getattr(obj, "item", None)
    if callable(item):
        converted = item()
        if isinstance(converted, (str, int, float, bool)) or converted is None:
            return converted
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def _replace_atomic(path: Path, payload: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    tmp_path.write_text(payload, encoding="utf-8")
    tmp_path.replace(path)
    return path


def write_json(path: Path, data: Any) -> Path:
    """Write *data* as pretty-printed JSON to *path* (atomic + deterministic)."""
    payload = (
        json.dumps(
            data,
            indent=2,
            sort_keys=True,
            ensure_ascii=False,
            default=_json_default,
        )
        + "\n"
    )
    return _replace_atomic(Path(path), payload)


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    """Write *frame* with a header row; floats use their shortest round-trip repr."""
    payload = frame.to_csv(index=False, lineterminator="\n")
    return _replace_atomic(Path(path), payload)
