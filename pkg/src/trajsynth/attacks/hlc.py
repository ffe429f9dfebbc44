"""Home-location detection: density clustering of nighttime points per user,
and shift measures between the home candidates found in raw versus protected
data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.cluster import DBSCAN

from ..errors import ValidationError

NIGHT_START = 20  # 8 PM through 7 AM next day
NIGHT_END = 7


def nighttime_mask(hours: pd.Series, night_start: int = NIGHT_START, night_end: int = NIGHT_END) -> pd.Series:
    return (hours >= night_start) | (hours < night_end)


@dataclass(frozen=True)
class HomeCluster:
    size: int
    centroid: tuple
    medoid: tuple


@dataclass(frozen=True)
class HLCReport:
    mean_centroid_shift: float
    median_centroid_shift: float
    mean_medoid_shift: float
    median_medoid_shift: float
    mean_home_clusters: float
    median_home_clusters: float

    def as_dict(self) -> dict:
        return {
            "mean_centroid_shift": self.mean_centroid_shift,
            "median_centroid_shift": self.median_centroid_shift,
            "mean_medoid_shift": self.mean_medoid_shift,
            "median_medoid_shift": self.median_medoid_shift,
            "mean_home_clusters": self.mean_home_clusters,
            "median_home_clusters": self.median_home_clusters,
        }


def dbscan_clusters(points: np.ndarray, eps: float, min_pts: int) -> list[HomeCluster]:
    """Density clusters of 2-D points, largest first; noise is dropped.

    Points are sorted lexicographically before clustering so the result does
    not depend on input order; ties in size rank by centroid.
    """
    if eps <= 0:
        raise ValidationError(f"eps must be > 0, got {eps}")
    if min_pts < 1:
        raise ValidationError(f"min_pts must be >= 1, got {min_pts}")
    if len(points) == 0:
        return []
    pts = np.asarray(points, dtype=float)
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    labels = DBSCAN(eps=eps, min_samples=min_pts).fit_predict(pts)
    clusters = []
    for label in sorted(set(labels) - {-1}):
        members = pts[labels == label]
        centroid = members.mean(axis=0)
        dists = np.linalg.norm(members[:, None, :] - members[None, :, :], axis=2).sum(axis=1)
        medoid = members[int(np.argmin(dists))]
        clusters.append(
            HomeCluster(
                size=len(members),
                centroid=(float(centroid[0]), float(centroid[1])),
                medoid=(float(medoid[0]), float(medoid[1])),
            )
        )
    clusters.sort(key=lambda c: (-c.size, c.centroid))
    return clusters


def home_location_clusters(df: pd.DataFrame, eps: float, min_pts: int = 4) -> dict:
    """Per-user nighttime clusters; users whose points are all noise get []."""
    out: dict[str, list] = {}
    night = df[nighttime_mask(df["hour"])]
    for uid in sorted(df["user_id"].unique()):
        pts = night[night["user_id"] == uid][["lat", "lon"]].to_numpy()
        out[str(uid)] = dbscan_clusters(pts, eps, min_pts)
    return out


def hlc_report(raw: pd.DataFrame, protected: pd.DataFrame, eps: float, min_pts: int = 4) -> HLCReport:
    """Shifts of the largest home cluster between raw and protected data.

    Shifts are Euclidean in degrees; users lacking a home cluster on either
    side contribute to the cluster counts but not to the shift statistics.
    """
    raw_clusters = home_location_clusters(raw, eps, min_pts)
    other_clusters = home_location_clusters(protected, eps, min_pts)
    centroid_shifts, medoid_shifts, counts = [], [], []
    for uid, raw_cl in raw_clusters.items():
        other_cl = other_clusters.get(uid, [])
        counts.append(len(other_cl))
        if raw_cl and other_cl:
            centroid_shifts.append(
                float(np.linalg.norm(np.subtract(raw_cl[0].centroid, other_cl[0].centroid)))
            )
            medoid_shifts.append(
                float(np.linalg.norm(np.subtract(raw_cl[0].medoid, other_cl[0].medoid)))
            )
    def stat(values, fn):
        return float(fn(values)) if values else 0.0

    return HLCReport(
        mean_centroid_shift=stat(centroid_shifts, np.mean),
        median_centroid_shift=stat(centroid_shifts, np.median),
        mean_medoid_shift=stat(medoid_shifts, np.mean),
        median_medoid_shift=stat(medoid_shifts, np.median),
        mean_home_clusters=stat(counts, np.mean),
        median_home_clusters=stat(counts, np.median),
    )


def hlc_eps_sweep(raw: pd.DataFrame, protected: pd.DataFrame, min_pts: int = 4,
                  eps_start: float = 0.002, eps_stop: float = 0.042, eps_step: float = 0.002) -> pd.DataFrame:
    """One HLCReport row per eps over the configured radius range."""
    rows = []
    eps_values = np.arange(eps_start, eps_stop + eps_step / 2, eps_step)
    for eps in eps_values:
        report = hlc_report(raw, protected, float(eps), min_pts)
        rows.append({"eps": round(float(eps), 6), **report.as_dict()})
    return pd.DataFrame(rows)
