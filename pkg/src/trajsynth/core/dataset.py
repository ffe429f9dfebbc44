"""Dataset-level helpers bridging trajectory DataFrames and domain types."""

from __future__ import annotations

import numpy as np
import pandas as pd

from ..errors import EmptyInputError
from .grid import GridSystem, encode_points
from .mobility import MobilityMatrix, aggregate_trajectories
from .trajectory import DailyTrajectory, interpolate_missing


def attach_cells(df: pd.DataFrame, grid: GridSystem) -> pd.DataFrame:
    """Copy of the dataset with ``row``/``col`` cell-index columns appended."""
    rows, cols = encode_points(grid, df["lat"].to_numpy(), df["lon"].to_numpy())
    out = df.copy()
    out["row"] = rows
    out["col"] = cols
    return out


def daily_trajectories(df: pd.DataFrame, grid: GridSystem) -> list[DailyTrajectory]:
    """One gridded daily trajectory per (user, day), gaps interpolated.

    When an hour carries several records, the lexicographically smallest
    (lat, lon) wins, which keeps the result independent of row order.
    """
    if df.empty:
        raise EmptyInputError("empty dataset")
    work = attach_cells(df, grid).sort_values(["user_id", "day", "hour", "lat", "lon"], kind="mergesort")
    dedup = work.drop_duplicates(subset=["user_id", "day", "hour"], keep="first")
    out = []
    for (user_id, day), group in dedup.groupby(["user_id", "day"], sort=True):
        observed = {
            int(h): (int(r), int(c))
            for h, r, c in zip(group["hour"], group["row"], group["col"])
        }
        out.append(interpolate_missing(observed, grid.hours_per_day, user_id=str(user_id), day=int(day)))
    return out


def matrices_by_user(df: pd.DataFrame, grid: GridSystem) -> dict[str, MobilityMatrix]:
    """Aggregate each user's interpolated daily trajectories into a mobility matrix."""
    trajectories = daily_trajectories(df, grid)
    by_user: dict[str, list[DailyTrajectory]] = {}
    for t in trajectories:
        by_user.setdefault(t.user_id, []).append(t)
    return {uid: aggregate_trajectories(ts, grid) for uid, ts in sorted(by_user.items())}


def user_centroids(df: pd.DataFrame) -> dict[str, tuple[float, float]]:
    """Mean (lat, lon) per user."""
    if df.empty:
        raise EmptyInputError("empty dataset")
    means = df.groupby("user_id", sort=True)[["lat", "lon"]].mean()
    return {str(uid): (float(lat), float(lon)) for uid, (lat, lon) in means.iterrows()}


def frame_from_trajectories(trajectories, grid: GridSystem, synthetic: bool = False) -> pd.DataFrame:
    """Render daily trajectories back to the dataset schema at cell centers."""
    rows = []
    for t in trajectories:
        for hour, (r, c) in enumerate(t.points):
            lat, lon = grid.cell_center(r, c)
            rows.append((t.user_id, t.day, hour, lat, lon))
    out = pd.DataFrame(rows, columns=["user_id", "day", "hour", "lat", "lon"])
    if synthetic:
        out["synthetic"] = 1
    return out
