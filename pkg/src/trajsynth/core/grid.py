"""Study-area grid: a bounded rectangle discretized into an N x N cell lattice.

Latitude maps to rows and longitude to columns, with row 0 at ``lat_min``.
Cells are half-open on the lower side except for the first cell, so points
that fall exactly on an internal cell edge belong to the lower-index cell
and points on the outer boundary are still inside the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import OutOfBoundsError, ValidationError


@dataclass(frozen=True)
class GridSystem:
    """Bounded study area split into ``cells_per_side`` x ``cells_per_side`` cells
    with ``hours_per_day`` time bins."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    cells_per_side: int
    hours_per_day: int = 24

    def __post_init__(self):
        if not (self.lat_min < self.lat_max):
            raise ValidationError(f"lat_min must be < lat_max, got [{self.lat_min}, {self.lat_max}]")
        if not (self.lon_min < self.lon_max):
            raise ValidationError(f"lon_min must be < lon_max, got [{self.lon_min}, {self.lon_max}]")
        if self.cells_per_side < 1:
            raise ValidationError(f"cells_per_side must be >= 1, got {self.cells_per_side}")
        if self.hours_per_day < 1:
            raise ValidationError(f"hours_per_day must be >= 1, got {self.hours_per_day}")

    @property
    def n(self) -> int:
        return self.cells_per_side

    @property
    def cell_height(self) -> float:
        return (self.lat_max - self.lat_min) / self.cells_per_side

    @property
    def cell_width(self) -> float:
        return (self.lon_max - self.lon_min) / self.cells_per_side

    def contains(self, lat: float, lon: float) -> bool:
        return (
            self.lat_min <= lat <= self.lat_max
            and self.lon_min <= lon <= self.lon_max
        )

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        """(lat, lon) of the center of cell (row, col)."""
        if not (0 <= row < self.n and 0 <= col < self.n):
            raise OutOfBoundsError(f"cell ({row}, {col}) outside {self.n}x{self.n} grid")
        return (
            self.lat_min + (row + 0.5) * self.cell_height,
            self.lon_min + (col + 0.5) * self.cell_width,
        )

    def cell_center_unit(self, row: int, col: int) -> tuple[float, float]:
        """Cell center scaled to the unit square, for model inputs."""
        return ((row + 0.5) / self.n, (col + 0.5) / self.n)

    def all_cell_centers(self) -> np.ndarray:
        """(N*N, 2) array of cell centers in (lat, lon), row-major order."""
        rows, cols = np.divmod(np.arange(self.n * self.n), self.n)
        lats = self.lat_min + (rows + 0.5) * self.cell_height
        lons = self.lon_min + (cols + 0.5) * self.cell_width
        return np.column_stack([lats, lons])


def _axis_index(value: float, lo: float, hi: float, n: int) -> int:
    # Half-open on the lower side: an exact internal edge hit goes to the
    # lower-index cell; the outer bounds map to cells 0 and n - 1.
    scaled = (value - lo) / (hi - lo) * n
    idx = math.ceil(scaled) - 1
    return min(max(idx, 0), n - 1)


def encode_point(grid: GridSystem, lat: float, lon: float) -> tuple[int, int]:
    """Cell (row, col) enclosing the point; raises OutOfBoundsError outside the grid."""
    if not grid.contains(lat, lon):
        raise OutOfBoundsError(
            f"point ({lat}, {lon}) outside grid "
            f"[{grid.lat_min}, {grid.lat_max}] x [{grid.lon_min}, {grid.lon_max}]"
        )
    row = _axis_index(lat, grid.lat_min, grid.lat_max, grid.n)
    col = _axis_index(lon, grid.lon_min, grid.lon_max, grid.n)
    return row, col


def encode_points(grid: GridSystem, lats: np.ndarray, lons: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`encode_point` over arrays of coordinates."""
    lats = np.asarray(lats, dtype=float)
    lons = np.asarray(lons, dtype=float)
    bad = ~(
        (grid.lat_min <= lats) & (lats <= grid.lat_max)
        & (grid.lon_min <= lons) & (lons <= grid.lon_max)
    )
    if bad.any():
        i = int(np.argmax(bad))
        raise OutOfBoundsError(f"point ({lats[i]}, {lons[i]}) outside grid bounds")
    rows = np.ceil((lats - grid.lat_min) / (grid.lat_max - grid.lat_min) * grid.n).astype(int) - 1
    cols = np.ceil((lons - grid.lon_min) / (grid.lon_max - grid.lon_min) * grid.n).astype(int) - 1
    return np.clip(rows, 0, grid.n - 1), np.clip(cols, 0, grid.n - 1)
