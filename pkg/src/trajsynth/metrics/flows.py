"""Origin-destination flow matrices and Gaussian-windowed structural similarity."""

from __future__ import annotations

import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter

from ..core.grid import GridSystem, encode_points
from ..errors import ShapeMismatchError, ValidationError

SSIM_SIGMAS = (128.0, 96.0, 64.0)


def od_matrix(df: pd.DataFrame, grid: GridSystem, regions: int = 32) -> np.ndarray:
    """R x R counts of hourly trips between distinct regions, R = regions^2.

    The study area is re-divided into ``regions`` x ``regions`` coarse cells;
    every consecutive-hour pair within a (user, day) trajectory whose regions
    differ contributes one trip. Points outside the grid are dropped.
    """
    if regions < 1:
        raise ValidationError(f"regions must be >= 1, got {regions}")
    coarse = GridSystem(
        lat_min=grid.lat_min, lat_max=grid.lat_max,
        lon_min=grid.lon_min, lon_max=grid.lon_max,
        cells_per_side=regions, hours_per_day=grid.hours_per_day,
    )
    inside = (
        (df["lat"] >= grid.lat_min) & (df["lat"] <= grid.lat_max)
        & (df["lon"] >= grid.lon_min) & (df["lon"] <= grid.lon_max)
    )
    work = df[inside].sort_values(["user_id", "day", "hour"], kind="mergesort")
    rows, cols = encode_points(coarse, work["lat"].to_numpy(), work["lon"].to_numpy())
    region = rows * regions + cols
    r_total = regions * regions
    out = np.zeros((r_total, r_total))
    same_traj = (
        (work["user_id"].to_numpy()[1:] == work["user_id"].to_numpy()[:-1])
        & (work["day"].to_numpy()[1:] == work["day"].to_numpy()[:-1])
        & (work["hour"].to_numpy()[1:] == work["hour"].to_numpy()[:-1] + 1)
    )
    origins = region[:-1][same_traj]
    dests = region[1:][same_traj]
    moved = origins != dests
    np.add.at(out, (origins[moved], dests[moved]), 1.0)
    return out


def ssim(a: np.ndarray, b: np.ndarray, sigma: float) -> float:
    """Structural similarity with a normalized Gaussian window of scale sigma.

    Standard luminance/contrast/structure product with stabilizers
    C1 = (0.01 L)^2 and C2 = (0.03 L)^2 where L is the value range across
    both matrices; windows use reflective boundaries. Result lies in [-1, 1]
    and equals 1 exactly for identical inputs.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeMismatchError(f"need equal 2-D matrices, got {a.shape} and {b.shape}")
    if sigma <= 0:
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    value_range = max(a.max(), b.max()) - min(a.min(), b.min())
    L = value_range if value_range > 0 else 1.0
    c1 = (0.01 * L) ** 2
    c2 = (0.03 * L) ** 2

    def smooth(x):
        return gaussian_filter(x, sigma=sigma, mode="reflect")

    mu_a = smooth(a)
    mu_b = smooth(b)
    var_a = smooth(a * a) - mu_a * mu_a
    var_b = smooth(b * b) - mu_b * mu_b
    cov = smooth(a * b) - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(ssim_map.mean())


def mean_ssim(a: np.ndarray, b: np.ndarray, sigmas=SSIM_SIGMAS) -> dict:
    """SSIM per window scale plus their average."""
    per_sigma = {f"sigma={int(s)}": ssim(a, b, s) for s in sigmas}
    per_sigma["average"] = float(np.mean(list(per_sigma.values())))
    return per_sigma
