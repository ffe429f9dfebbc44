"""Distribution distances between spatial histograms: exact order-2
Wasserstein via a transportation LP, and base-2 Jensen-Shannon divergence."""

from __future__ import annotations

import numpy as np
import pandas as pd
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from ..core.grid import GridSystem, encode_points
from ..errors import ShapeMismatchError, ValidationError, ZeroMassError

DEFAULT_MAX_SIDE = 64


def spatial_histogram(df: pd.DataFrame, grid: GridSystem, hour: int | None = None) -> np.ndarray:
    """N x N visit counts over the dataset, optionally restricted to one hour."""
    sub = df if hour is None else df[df["hour"] == hour]
    hist = np.zeros((grid.n, grid.n))
    if len(sub) == 0:
        return hist
    rows, cols = encode_points(grid, sub["lat"].to_numpy(), sub["lon"].to_numpy())
    np.add.at(hist, (rows, cols), 1.0)
    return hist


def clipped_histogram(df: pd.DataFrame, grid: GridSystem, hour: int | None = None) -> np.ndarray:
    """Histogram that drops out-of-grid points instead of failing.

    Noise mechanisms push points beyond the study area; for distribution
    comparisons those points are simply outside the common support.
    """
    sub = df if hour is None else df[df["hour"] == hour]
    inside = (
        (sub["lat"] >= grid.lat_min) & (sub["lat"] <= grid.lat_max)
        & (sub["lon"] >= grid.lon_min) & (sub["lon"] <= grid.lon_max)
    )
    return spatial_histogram(sub[inside], grid, hour=None)


def coarsen_histogram(hist: np.ndarray, factor: int) -> np.ndarray:
    """Block-sum an N x N histogram by an integer factor (N divisible)."""
    n = hist.shape[0]
    if n % factor:
        raise ValidationError(f"side {n} not divisible by factor {factor}")
    m = n // factor
    return hist.reshape(m, factor, m, factor).sum(axis=(1, 3))


def _normalize(hist: np.ndarray, name: str) -> np.ndarray:
    hist = np.asarray(hist, dtype=float)
    total = hist.sum()
    if total <= 0:
        raise ZeroMassError(f"{name} histogram has no mass")
    if (hist < 0).any():
        raise ValidationError(f"{name} histogram has negative entries")
    return hist / total


def wasserstein2(a: np.ndarray, b: np.ndarray, max_side: int = DEFAULT_MAX_SIDE) -> float:
    """Exact order-2 Wasserstein distance between two same-grid histograms.

    Ground cost is squared Euclidean distance between cell centers in cell
    units; the returned value is the square root of the optimal transport
    cost. Histograms wider than ``max_side`` are block-coarsened first (the
    distance stays in original cell units).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatchError(f"need equal square histograms, got {a.shape} and {b.shape}")
    a = _normalize(a, "first")
    b = _normalize(b, "second")
    scale = 1.0
    while a.shape[0] > max_side:
        a = coarsen_histogram(a, 2)
        b = coarsen_histogram(b, 2)
        scale *= 2.0
    if np.array_equal(a, b):
        return 0.0
    ai, aj = np.nonzero(a)
    bi, bj = np.nonzero(b)
    weights_a = a[ai, aj]
    weights_b = b[bi, bj]
    cost = (ai[:, None] - bi[None, :]) ** 2.0 + (aj[:, None] - bj[None, :]) ** 2.0
    m, n = len(weights_a), len(weights_b)
    rows = np.concatenate([np.repeat(np.arange(m), n), m + np.tile(np.arange(n), m)])
    cols = np.tile(np.arange(m * n), 2)
    a_eq = coo_matrix((np.ones(2 * m * n), (rows, cols)), shape=(m + n, m * n)).tocsr()
    res = linprog(
        cost.reshape(-1),
        A_eq=a_eq,
        b_eq=np.concatenate([weights_a, weights_b]),
        bounds=(0.0, None),
        method="highs",
    )
    if not res.success:
        raise ValidationError(f"transport LP failed: {res.message}")
    return float(np.sqrt(max(res.fun, 0.0))) * scale


def kld(a: np.ndarray, m: np.ndarray) -> float:
    """Base-2 Kullback-Leibler divergence; the second argument must dominate."""
    a = _normalize(a, "first").reshape(-1)
    m = _normalize(m, "second").reshape(-1)
    support = a > 0
    if (m[support] <= 0).any():
        raise ValidationError("second distribution does not dominate the first")
    return float(np.sum(a[support] * np.log2(a[support] / m[support])))


def jsd(a: np.ndarray, b: np.ndarray) -> float:
    """Base-2 Jensen-Shannon divergence, bounded in [0, 1]."""
    a = _normalize(a, "first")
    b = _normalize(b, "second")
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shapes differ: {a.shape} vs {b.shape}")
    mix = 0.5 * (a + b)
    return 0.5 * kld(a, mix) + 0.5 * kld(b, mix)
