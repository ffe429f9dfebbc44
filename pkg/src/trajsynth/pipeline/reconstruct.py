"""Rebuilding per-user mobility matrices from sparse area-wide check-in data.

With no raw trajectories available, hourly check-in frequencies form one
area-wide matrix. Synthetic users are anchored at high-density cells that
have check-ins in every nighttime hour, and each user's matrix is carved out
of the area matrix by per-hour sampling without replacement, weighted by
check-in count times an exponential distance decay around the anchor.
"""

from __future__ import annotations

import math

import numpy as np
import pandas as pd

from ..core.grid import GridSystem, encode_points
from ..core.mobility import MobilityMatrix
from ..errors import InsufficientCoverageError, ValidationError
from ..rng import substream
from ..attacks.hlc import NIGHT_END, NIGHT_START

DEFAULT_DECAY_CELLS = 8.0


def checkin_counts(checkins: pd.DataFrame, grid: GridSystem) -> np.ndarray:
    """(T, N, N) check-in counts per hour and cell."""
    counts = np.zeros((grid.hours_per_day, grid.n, grid.n))
    rows, cols = encode_points(grid, checkins["lat"].to_numpy(), checkins["lon"].to_numpy())
    hours = checkins["hour"].to_numpy(dtype=int)
    if (hours < 0).any() or (hours >= grid.hours_per_day).any():
        raise ValidationError("check-in hour outside the grid's day")
    np.add.at(counts, (hours, rows, cols), 1.0)
    return counts


def area_matrix(checkins: pd.DataFrame, grid: GridSystem) -> MobilityMatrix:
    """Area-wide matrix: per-hour check-in frequencies normalized per slice."""
    counts = checkin_counts(checkins, grid)
    sums = counts.sum(axis=(1, 2), keepdims=True)
    data = np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)
    return MobilityMatrix(user_id="area", data=data)


def nighttime_hours(hours_per_day: int) -> list[int]:
    return [h for h in range(hours_per_day) if h >= NIGHT_START or h < NIGHT_END]


def anchor_candidates(counts: np.ndarray) -> list[tuple]:
    """Cells with at least one check-in during every nighttime hour."""
    night = nighttime_hours(counts.shape[0])
    if not night:
        raise ValidationError("grid day has no nighttime hours to anchor on")
    covered = (counts[night] > 0).all(axis=0)
    return [(int(r), int(c)) for r, c in zip(*np.nonzero(covered))]


def sample_anchors(counts: np.ndarray, n_users: int, seed: int) -> list[tuple]:
    """Anchors drawn with probability proportional to total check-in volume."""
    candidates = anchor_candidates(counts)
    if not candidates:
        raise InsufficientCoverageError(
            "no cell has check-ins in every nighttime hour"
        )
    totals = np.array([counts[:, r, c].sum() for r, c in candidates])
    rng = substream(seed, "anchors")
    idx = rng.choice(len(candidates), size=n_users, replace=True, p=totals / totals.sum())
    return [candidates[i] for i in idx]


def decay_weights(counts_slice: np.ndarray, anchor: tuple, decay_cells: float) -> np.ndarray:
    """count * exp(-distance/decay) over the slice; infinite decay means raw counts."""
    n = counts_slice.shape[0]
    rows, cols = np.indices((n, n))
    if math.isinf(decay_cells):
        return counts_slice.copy()
    dist = np.hypot(rows - anchor[0], cols - anchor[1])
    return counts_slice * np.exp(-dist / decay_cells)


def reconstruct_from_checkins(
    checkins: pd.DataFrame,
    grid: GridSystem,
    n_users: int,
    seed: int = 0,
    decay_cells: float = DEFAULT_DECAY_CELLS,
    cells_per_hour: int | None = None,
) -> dict:
    """Disaggregate area-wide check-ins into per-user mobility matrices.

    Each synthetic user samples ``cells_per_hour`` distinct cells per hour
    (default: half of the hour's support, at least one) with weights
    proportional to count times distance decay around their anchor; the
    user's hour slice is the check-in counts on the sampled cells,
    renormalized. Raises InsufficientCoverageError when no anchor cell
    covers the whole night.
    """
    if n_users < 1:
        raise ValidationError(f"n_users must be >= 1, got {n_users}")
    counts = checkin_counts(checkins, grid)
    anchors = sample_anchors(counts, n_users, seed)
    matrices = {}
    for u, anchor in enumerate(anchors):
        uid = f"rec{u:03d}"
        data = np.zeros_like(counts)
        for hour in range(grid.hours_per_day):
            slice_counts = counts[hour]
            support = np.nonzero(slice_counts.reshape(-1))[0]
            if len(support) == 0:
                continue
            k = cells_per_hour or max(1, len(support) // 2)
            k = min(k, len(support))
            weights = decay_weights(slice_counts, anchor, decay_cells).reshape(-1)[support]
            rng = substream(seed, "disaggregate", uid, hour)
            chosen = rng.choice(support, size=k, replace=False, p=weights / weights.sum())
            flat = data[hour].reshape(-1)
            flat[chosen] = slice_counts.reshape(-1)[chosen]
            total = flat.sum()
            if total > 0:
                flat /= total
        matrices[uid] = MobilityMatrix(user_id=uid, data=data)
    return matrices
