"""Per-user mobility matrices: T stacked hour-slices of location probabilities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyInputError, ShapeMismatchError, ValidationError
from .grid import GridSystem, encode_point
from .trajectory import DailyTrajectory, TrajectoryRecord

SLICE_SUM_TOL = 1e-9


@dataclass(frozen=True)
class MobilityMatrix:
    """T x N x N tensor whose hour-slices are probability distributions.

    Slices with no observations are left all-zero and listed in
    ``zero_hours``; downstream conditional sampling rejects them.
    """

    user_id: str
    data: np.ndarray
    zero_hours: tuple = ()

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[1] != data.shape[2]:
            raise ShapeMismatchError(f"mobility matrix must be T x N x N, got {data.shape}")
        if (data < 0).any():
            raise ValidationError("mobility matrix entries must be non-negative")
        sums = data.sum(axis=(1, 2))
        zero = sums == 0.0
        bad = ~zero & (np.abs(sums - 1.0) > SLICE_SUM_TOL)
        if bad.any():
            h = int(np.argmax(bad))
            raise ValidationError(f"hour slice {h} sums to {sums[h]!r}, expected 1 or 0")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "zero_hours", tuple(int(h) for h in np.nonzero(zero)[0]))

    @property
    def hours(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    def slice_at(self, hour: int) -> np.ndarray:
        return self.data[hour]


def _normalize_counts(counts: np.ndarray) -> np.ndarray:
    sums = counts.sum(axis=(1, 2), keepdims=True)
    out = np.zeros_like(counts)
    nonzero = sums[:, 0, 0] > 0
    out[nonzero] = counts[nonzero] / sums[nonzero]
    return out


def aggregate_user(records, grid: GridSystem) -> MobilityMatrix:
    """Count a user's records into per-hour cell histograms and normalize each slice."""
    records = list(records)
    if not records:
        raise EmptyInputError("no records to aggregate")
    user_ids = {r.user_id for r in records}
    if len(user_ids) != 1:
        raise ValidationError(f"records span several users: {sorted(user_ids)}")
    counts = np.zeros((grid.hours_per_day, grid.n, grid.n))
    for r in records:
        if not (0 <= r.hour < grid.hours_per_day):
            raise ValidationError(f"record hour {r.hour} outside [0, {grid.hours_per_day})")
        row, col = encode_point(grid, r.lat, r.lon)
        counts[r.hour, row, col] += 1.0
    return MobilityMatrix(user_id=records[0].user_id, data=_normalize_counts(counts))


def aggregate_trajectories(trajectories, grid: GridSystem) -> MobilityMatrix:
    """Aggregate already-gridded daily trajectories of one user."""
    trajectories = list(trajectories)
    if not trajectories:
        raise EmptyInputError("no trajectories to aggregate")
    user_ids = {t.user_id for t in trajectories}
    if len(user_ids) != 1:
        raise ValidationError(f"trajectories span several users: {sorted(user_ids)}")
    counts = np.zeros((grid.hours_per_day, grid.n, grid.n))
    for t in trajectories:
        t.validate(grid)
        for hour, (row, col) in enumerate(t.points):
            counts[hour, row, col] += 1.0
    return MobilityMatrix(user_id=trajectories[0].user_id, data=_normalize_counts(counts))
