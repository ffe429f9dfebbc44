"""Trajectory records, fixed-length daily trajectories, and gap interpolation."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import AllMissingError, EmptyInputError, ValidationError
from .grid import GridSystem


@dataclass(frozen=True)
class TrajectoryRecord:
    """One observed point: a user at (lat, lon) during hour ``hour`` of day ``day``."""

    user_id: str
    day: int
    hour: int
    lat: float
    lon: float


@dataclass(frozen=True)
class DailyTrajectory:
    """A user's day as exactly one grid cell per hour."""

    user_id: str
    day: int
    points: tuple  # hours_per_day (row, col) pairs

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(tuple(p) for p in self.points))

    def validate(self, grid: GridSystem) -> "DailyTrajectory":
        if len(self.points) != grid.hours_per_day:
            raise ValidationError(
                f"daily trajectory has {len(self.points)} points, expected {grid.hours_per_day}"
            )
        for row, col in self.points:
            if not (0 <= row < grid.n and 0 <= col < grid.n):
                raise ValidationError(f"cell ({row}, {col}) outside {grid.n}x{grid.n} grid")
        return self


def interpolate_missing(observed: dict, hours_per_day: int, user_id: str = "", day: int = 0) -> DailyTrajectory:
    """Fill unobserved hours with the temporally nearest observed cell.

    ``observed`` maps hour -> (row, col). Equidistant neighbors resolve to the
    earlier hour. Raises AllMissingError when nothing was observed.
    """
    if not observed:
        raise AllMissingError(f"user {user_id!r} day {day} has no observed hours")
    hours = sorted(observed)
    for h in hours:
        if not (0 <= h < hours_per_day):
            raise ValidationError(f"observed hour {h} outside [0, {hours_per_day})")
    points = []
    for h in range(hours_per_day):
        if h in observed:
            points.append(observed[h])
            continue
        nearest = min(hours, key=lambda o: (abs(o - h), o))
        points.append(observed[nearest])
    return DailyTrajectory(user_id=user_id, day=day, points=tuple(points))


def user_centroid(records) -> tuple[float, float]:
    """Arithmetic mean (lat, lon) over a user's records."""
    records = list(records)
    if not records:
        raise EmptyInputError("cannot compute a centroid of zero records")
    lat = sum(r.lat for r in records) / len(records)
    lon = sum(r.lon for r in records) / len(records)
    return lat, lon
