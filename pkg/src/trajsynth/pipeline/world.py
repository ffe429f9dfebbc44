"""Synthetic grid-city dataset: commuting users on a bounded grid.

Each user follows a home -> work -> home daily loop with per-user home and
work cells, per-user commute hours, and optional per-record noise that
teleports the user to a uniformly random cell. Deterministic per seed, so
worlds regenerate bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..core.grid import GridSystem
from ..errors import ValidationError
from ..rng import substream


@dataclass(frozen=True)
class UserArchetype:
    user_id: str
    home: tuple
    work: tuple
    work_start: int
    work_end: int
    noise_rate: float

    def cell_at(self, hour: int) -> tuple:
        return self.work if self.work_start <= hour < self.work_end else self.home


@dataclass(frozen=True)
class SyntheticWorldSpec:
    n_users: int = 20
    n_days: int = 80
    cells_per_side: int = 16
    hours_per_day: int = 24
    noise_rate: float = 0.05
    lat_min: float = 0.0
    lat_max: float = 0.16
    lon_min: float = 0.0
    lon_max: float = 0.16

    def __post_init__(self):
        if self.n_users < 1 or self.n_days < 1:
            raise ValidationError("need at least one user and one day")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValidationError(f"noise_rate must be in [0, 1], got {self.noise_rate}")
        if self.n_users * 2 > self.cells_per_side**2:
            raise ValidationError("grid too small for distinct home and work cells")

    def grid(self) -> GridSystem:
        return GridSystem(
            lat_min=self.lat_min, lat_max=self.lat_max,
            lon_min=self.lon_min, lon_max=self.lon_max,
            cells_per_side=self.cells_per_side, hours_per_day=self.hours_per_day,
        )


def world_archetypes(spec: SyntheticWorldSpec, seed: int) -> list[UserArchetype]:
    """Per-user home/work cells (all distinct, for separable users) and hours."""
    n = spec.cells_per_side
    rng = substream(seed, "archetypes")
    cells = rng.choice(n * n, size=2 * spec.n_users, replace=False)
    hours = spec.hours_per_day
    start_base = max(1, hours // 3)
    end_base = max(start_base + 1, (2 * hours) // 3)
    archetypes = []
    for u in range(spec.n_users):
        home = (int(cells[2 * u] // n), int(cells[2 * u] % n))
        work = (int(cells[2 * u + 1] // n), int(cells[2 * u + 1] % n))
        jitter = substream(seed, "hours", u)
        work_start = start_base + int(jitter.integers(0, max(1, hours // 8)))
        work_end = min(hours, end_base + int(jitter.integers(0, max(1, hours // 8))))
        archetypes.append(
            UserArchetype(
                user_id=f"user{u:03d}", home=home, work=work,
                work_start=work_start, work_end=work_end,
                noise_rate=spec.noise_rate,
            )
        )
    return archetypes


def generate_world(spec: SyntheticWorldSpec, seed: int = 0) -> pd.DataFrame:
    """Raw dataset of n_users * n_days * hours_per_day records at cell centers."""
    grid = spec.grid()
    n = spec.cells_per_side
    rows = []
    for archetype in world_archetypes(spec, seed):
        base_cells = [archetype.cell_at(h) for h in range(spec.hours_per_day)]
        for day in range(spec.n_days):
            rng = substream(seed, "noise", archetype.user_id, day)
            flips = rng.uniform(size=spec.hours_per_day) < archetype.noise_rate
            randoms = rng.integers(0, n * n, size=spec.hours_per_day)
            for hour in range(spec.hours_per_day):
                cell = base_cells[hour]
                if flips[hour]:
                    cell = (int(randoms[hour] // n), int(randoms[hour] % n))
                lat, lon = grid.cell_center(*cell)
                rows.append((archetype.user_id, day, hour, lat, lon))
    return pd.DataFrame(rows, columns=["user_id", "day", "hour", "lat", "lon"])
