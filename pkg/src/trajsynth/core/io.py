"""Dataset CSV ingestion and the binary mobility-matrix container.

Datasets travel as pandas DataFrames with columns
``user_id, day, hour, lat, lon`` (plus an optional ``synthetic`` flag for
generated data). Mobility matrices serialize to a flat binary layout
(magic ``STMM``, little-endian u16 version, u32 T and N, row-major float64)
with a JSON sidecar carrying the grid bounds and provenance fields.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import ValidationError
from .grid import GridSystem
from .mobility import MobilityMatrix
from .trajectory import TrajectoryRecord

DATASET_COLUMNS = ["user_id", "day", "hour", "lat", "lon"]
STMM_MAGIC = b"STMM"
STMM_VERSION = 1


def read_dataset(path) -> pd.DataFrame:
    """Read a trajectory CSV, rejecting malformed rows with line numbers."""
    path = Path(path)
    rows = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        header = fh.readline().strip()
        while header.startswith("#"):
            header = fh.readline().strip()
        names = [c.strip() for c in header.split(",")]
        if names[: len(DATASET_COLUMNS)] != DATASET_COLUMNS:
            raise ValidationError(
                f"{path}: expected header starting with {','.join(DATASET_COLUMNS)!r}, got {header!r}"
            )
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != len(names):
                raise ValidationError(f"{path}:{lineno}: expected {len(names)} fields, got {len(parts)}")
            try:
                rows.append(
                    (parts[0], int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4]))
                    + tuple(parts[5:])
                )
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return pd.DataFrame(rows, columns=names).astype(
        {"day": int, "hour": int, "lat": float, "lon": float}
    )


def write_dataset(df: pd.DataFrame, path, header_comment: str | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        df.to_csv(fh, index=False)


def records_from_frame(df: pd.DataFrame):
    """Iterate a dataset DataFrame as TrajectoryRecord objects."""
    for user_id, day, hour, lat, lon in zip(df["user_id"], df["day"], df["hour"], df["lat"], df["lon"]):
        yield TrajectoryRecord(str(user_id), int(day), int(hour), float(lat), float(lon))


def frame_from_records(records) -> pd.DataFrame:
    rows = [(r.user_id, r.day, r.hour, r.lat, r.lon) for r in records]
    return pd.DataFrame(rows, columns=DATASET_COLUMNS)


def save_matrix(matrix: MobilityMatrix, grid: GridSystem, path, extra_meta: dict | None = None) -> None:
    """Write the binary tensor plus a ``.json`` sidecar next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    hours, n = matrix.hours, matrix.n
    with path.open("wb") as fh:
        fh.write(STMM_MAGIC)
        fh.write(struct.pack("<H", STMM_VERSION))
        fh.write(struct.pack("<II", hours, n))
        fh.write(np.ascontiguousarray(matrix.data, dtype="<f8").tobytes())
    sidecar = {
        "user_id": matrix.user_id,
        "hours": hours,
        "cells_per_side": n,
        "zero_hours": list(matrix.zero_hours),
        "grid": {
            "lat_min": grid.lat_min,
            "lat_max": grid.lat_max,
            "lon_min": grid.lon_min,
            "lon_max": grid.lon_max,
            "cells_per_side": grid.cells_per_side,
            "hours_per_day": grid.hours_per_day,
        },
    }
    if extra_meta:
        sidecar.update(extra_meta)
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_matrix(path) -> tuple[MobilityMatrix, GridSystem, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != STMM_MAGIC:
        raise ValidationError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != STMM_VERSION:
        raise ValidationError(f"{path}: unsupported version {version}")
    hours, n = struct.unpack_from("<II", raw, 6)
    expected = 14 + hours * n * n * 8
    if len(raw) != expected:
        raise ValidationError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=14).reshape(hours, n, n).copy()
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    g = sidecar["grid"]
    grid = GridSystem(
        lat_min=g["lat_min"], lat_max=g["lat_max"],
        lon_min=g["lon_min"], lon_max=g["lon_max"],
        cells_per_side=g["cells_per_side"], hours_per_day=g["hours_per_day"],
    )
    return MobilityMatrix(user_id=sidecar["user_id"], data=data), grid, sidecar
