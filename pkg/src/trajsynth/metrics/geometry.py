"""Geometric trajectory measures on great-circle geometry: jump length,
location switches, radius of gyration, and azimuth-based tortuosity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import TooShortError

EARTH_RADIUS_KM = 6371.0088


def haversine_km(p1, p2) -> float:
    """Great-circle distance in kilometers between (lat, lon) points in degrees."""
    lat1, lon1 = np.radians(p1)
    lat2, lon2 = np.radians(p2)
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return float(2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(h)))


def azimuth_deg(p1, p2) -> float:
    """Initial bearing from p1 to p2, degrees in [0, 360)."""
    lat1, lon1 = np.radians(p1)
    lat2, lon2 = np.radians(p2)
    dlon = lon2 - lon1
    x = np.sin(dlon) * np.cos(lat2)
    y = np.cos(lat1) * np.sin(lat2) - np.sin(lat1) * np.cos(lat2) * np.cos(dlon)
    return float(np.degrees(np.arctan2(x, y)) % 360.0)


def _wrap_turn(delta: float) -> float:
    """Absolute azimuth change folded into [0, 180]."""
    delta = abs(delta) % 360.0
    return 360.0 - delta if delta > 180.0 else delta


@dataclass(frozen=True)
class TrajectoryMeasures:
    jump_length_km: float
    location_switches: int
    tortuosity_deg: float


def jump_length(points) -> float:
    """Total Haversine distance in km over consecutive point pairs."""
    points = list(points)
    if len(points) < 2:
        raise TooShortError("jump length needs at least 2 points")
    return float(sum(haversine_km(points[i], points[i + 1]) for i in range(len(points) - 1)))


def location_switches(points) -> int:
    """Count of consecutive pairs with different coordinates."""
    points = list(points)
    if len(points) < 2:
        raise TooShortError("location switches need at least 2 points")
    return int(sum(1 for i in range(len(points) - 1) if points[i] != points[i + 1]))


def tortuosity(points) -> float:
    """Mean absolute change of movement azimuth, in degrees within [0, 180].

    Consecutive duplicate points are skipped when chaining azimuths; with
    fewer than two actual moves the direction never changes and the
    tortuosity is 0.
    """
    points = list(points)
    if len(points) < 3:
        raise TooShortError("tortuosity needs at least 3 points")
    moves = []
    for i in range(len(points) - 1):
        if points[i] != points[i + 1]:
            moves.append(azimuth_deg(points[i], points[i + 1]))
    if len(moves) < 2:
        return 0.0
    turns = [_wrap_turn(moves[i + 1] - moves[i]) for i in range(len(moves) - 1)]
    return float(np.mean(turns))


def radius_of_gyration(points) -> float:
    """Root-mean-square Haversine distance (km) of points from their centroid."""
    points = list(points)
    if not points:
        raise TooShortError("radius of gyration needs at least 1 point")
    arr = np.asarray(points, dtype=float)
    center = arr.mean(axis=0)
    sq = [haversine_km(p, center) ** 2 for p in points]
    return float(np.sqrt(np.mean(sq)))


def trajectory_measures(points) -> TrajectoryMeasures:
    """Jump length, switches, and tortuosity of one trajectory."""
    return TrajectoryMeasures(
        jump_length_km=jump_length(points),
        location_switches=location_switches(points),
        tortuosity_deg=tortuosity(points),
    )
