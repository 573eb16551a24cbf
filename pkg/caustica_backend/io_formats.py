"""
=============================================================================
IO FORMATS — CSF2 field files, CSV tables and versioned JSON metadata
=============================================================================

CSF2 layout
-----------
  bytes 0-3   magic b"CSF2"
  bytes 4-7   u32 n (little endian)
  bytes 8-15  f64 L (little endian)
  then n² little-endian f64 samples, row-major; complex fields store
  (re, im) pairs, so the payload is twice as long. The reader infers the
  kind from the payload size.

CSV files always carry a header row; JSON documents always carry
"schema_version": 1 and are written with sorted keys so identical runs
produce byte-identical files.
"""

import csv
import json
import logging
import os
import struct
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np

from caustica_backend.field_core import Grid2D, ScalarField2D

logger = logging.getLogger(__name__)

MAGIC = b"CSF2"
HEADER = struct.Struct("<4sId")
SCHEMA_VERSION = 1

PathLike = Union[str, os.PathLike]


def write_csf2(path: PathLike, field: ScalarField2D):
    data = np.ascontiguousarray(field.values)
    if field.is_complex:
        payload = np.ascontiguousarray(data.astype("<c16")).view("<f8")
    else:
        payload = data.astype("<f8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, field.grid.n, float(field.grid.L)))
        f.write(payload.tobytes(order="C"))
    logger.debug(f"wrote {path} (n={field.grid.n}, complex={field.is_complex})")


def read_csf2(path: PathLike) -> ScalarField2D:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HEADER.size:
        raise ValueError(f"{path}: truncated CSF2 header")
    magic, n, L = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a CSF2 file (magic {magic!r})")
    grid = Grid2D(n, L)
    body = np.frombuffer(raw, dtype="<f8", offset=HEADER.size)
    if body.size == n * n:
        values = body.reshape(n, n).astype(float)
    elif body.size == 2 * n * n:
        values = body.view("<c16").reshape(n, n).astype(complex)
    else:
        raise ValueError(f"{path}: payload of {body.size} doubles does not match n={n}")
    return ScalarField2D(grid, values)


def write_field_csv(path: PathLike, field: ScalarField2D):
    """x, y, value (plus imag for complex fields), one row per sample."""
    X, Y = field.grid.coords()
    fieldnames = ["x", "y", "value"] + (["imag"] if field.is_complex else [])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for x, y, v in zip(X.ravel(), Y.ravel(), field.values.ravel()):
            row = {"x": repr(float(x)), "y": repr(float(y)), "value": repr(float(np.real(v)))}
            if field.is_complex:
                row["imag"] = repr(float(np.imag(v)))
            writer.writerow(row)


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else None
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


def write_rows_csv(path: PathLike, rows: Sequence[Dict[str, Any]], fieldnames: List[str]):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k, "")) for k in fieldnames})
    logger.debug(f"wrote {len(rows)} row(s) to {path}")


def _cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def versioned(payload: Dict[str, Any]) -> Dict[str, Any]:
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(_plain(payload))
    return doc


def write_json(path: PathLike, payload: Dict[str, Any]):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(versioned(payload), f, indent=2, sort_keys=True)
        f.write("\n")


def read_rows_csv(path: PathLike) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def iter_floats(text: str) -> Iterable[float]:
    """"1,2,3" or "1:2:3" → floats."""
    for part in text.replace(":", ",").split(","):
        part = part.strip()
        if part:
            yield float(part)
