"""Comparison privacy mechanisms: uniform and Gaussian geomasking, planar
Laplace noise at point or trajectory scale, and sampling-based trajectory
K-anonymization with random matching.

All mechanisms are pure dataset-to-dataset maps. Noise streams derive from
(master seed, mechanism, user, day), so output is independent of row order
and trajectories can be processed in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator

from .core.dataset import frame_from_trajectories
from .core.grid import GridSystem
from .core.trajectory import DailyTrajectory
from .errors import ValidationError
from .generator import sample_all_hours
from .rng import substream

MECHANISMS = ("rp", "gg", "ldp", "tdp", "tka")
_INV_E = np.exp(-1.0)


@dataclass(frozen=True)
class NoiseConfig:
    """Mechanism tag plus every noise parameter, in degrees (epsilon in 1/degrees)."""

    mechanism: str
    a: float = -0.02
    b: float = 0.02
    mu: float = 0.0
    sigma: float = 0.02
    epsilon: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValidationError(f"mechanism must be one of {MECHANISMS}, got {self.mechanism!r}")
        if not self.a < self.b:
            raise ValidationError(f"need a < b, got a={self.a}, b={self.b}")
        if self.sigma <= 0:
            raise ValidationError(f"sigma must be > 0, got {self.sigma}")
        if self.epsilon <= 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")


def default_config(mechanism: str, seed: int = 0) -> NoiseConfig:
    """The preset noise levels used throughout the evaluation suite."""
    return NoiseConfig(mechanism=mechanism, seed=seed)


def lambert_w_m1(x):
    """Secondary real branch of the Lambert W function on [-1/e, 0).

    Guarded Halley iteration from a branch-appropriate starting point, with
    bisection as a fallback; accurate to about 1e-12 over the domain.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    if (x < -_INV_E - 1e-15).any() or (x >= 0).any():
        raise ValidationError("lambert_w_m1 domain is [-1/e, 0)")
    x = np.maximum(x, -_INV_E)
    w = np.empty_like(x)
    near_branch = x < -0.25 * _INV_E
    # series around the branch point x = -1/e; p <= 0 selects the lower branch
    p = -np.sqrt(np.maximum(2.0 * (1.0 + np.e * x[near_branch]), 0.0))
    w[near_branch] = -1.0 + p - p**2 / 3.0 + 11.0 * p**3 / 72.0
    lx = np.log(-x[~near_branch])
    w[~near_branch] = lx - np.log(-lx)
    w = np.minimum(w, -1.0)

    active = x > -_INV_E  # the exact branch point is already w = -1
    for _ in range(50):
        if not active.any():
            break
        wa = w[active]
        ew = np.exp(wa)
        f = wa * ew - x[active]
        fp = ew * (1.0 + wa)
        denom = fp - f * (wa + 2.0) / (2.0 * (wa + 1.0))
        bad = (denom == 0) | ~np.isfinite(denom)
        step = np.where(bad, 0.0, f / np.where(bad, 1.0, denom))
        w_new = np.minimum(wa - step, -1.0)
        moved = np.abs(w_new - wa) > 1e-15 * np.maximum(np.abs(w_new), 1.0)
        w[active] = w_new
        nxt = active.copy()
        nxt[active] = moved
        active = nxt

    residual = np.abs(w * np.exp(w) - x)
    stubborn = residual > 1e-12
    if stubborn.any():  # pragma: no cover - Halley converges on this domain
        w[stubborn] = _bisect_w_m1(x[stubborn])
    return float(w[0]) if scalar else w


def _bisect_w_m1(x: np.ndarray) -> np.ndarray:  # pragma: no cover - fallback path
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        lo, hi = -1.0, -1.0
        while lo * np.exp(lo) - xi < 0:
            lo *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid * np.exp(mid) - xi >= 0:
                lo = mid
            else:
                hi = mid
        out[i] = 0.5 * (lo + hi)
    return out


def planar_laplace_radius(p, epsilon: float):
    """Radius with CDF C(r) = 1 - (1 + eps*r) * exp(-eps*r), via inverse sampling."""
    p = np.asarray(p, dtype=float)
    return -(lambert_w_m1((p - 1.0) * _INV_E) + 1.0) / epsilon


def planar_laplace_sample(epsilon: float, seed) -> tuple[float, float]:
    """One (radius, angle) draw of the planar Laplace distribution."""
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be > 0, got {epsilon}")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "planar-laplace")
    u = rng.uniform(size=(1, 2))
    radius = float(planar_laplace_radius(u[:, 0], epsilon)[0])
    angle = float(2.0 * np.pi * u[0, 1])
    return radius, angle


def _planar_offsets(rng: np.random.Generator, epsilon: float, n: int) -> np.ndarray:
    u = rng.uniform(size=(n, 2))
    radius = planar_laplace_radius(u[:, 0], epsilon)
    angle = 2.0 * np.pi * u[:, 1]
    return np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])


def _apply_per_trajectory(df: pd.DataFrame, cfg: NoiseConfig, draw) -> pd.DataFrame:
    """Add ``draw(rng, n) -> (n, 2)`` offsets, one seeded stream per trajectory.

    Rows are visited in canonical (hour, lat, lon) order inside each
    trajectory, so the result does not depend on input row order.
    """
    out = df.copy()
    lat = out["lat"].to_numpy(dtype=float).copy()
    lon = out["lon"].to_numpy(dtype=float).copy()
    for (user, day), idx in df.groupby(["user_id", "day"], sort=True).indices.items():
        sub = df.iloc[idx]
        canon = idx[np.lexsort((sub["lon"].to_numpy(), sub["lat"].to_numpy(), sub["hour"].to_numpy()))]
        rng = substream(cfg.seed, cfg.mechanism, user, int(day))
        noise = draw(rng, len(canon))
        lat[canon] += noise[:, 0]
        lon[canon] += noise[:, 1]
    out["lat"] = lat
    out["lon"] = lon
    return out


def perturb_uniform(df: pd.DataFrame, cfg: NoiseConfig) -> pd.DataFrame:
    """Independent U(a, b) noise on each point's latitude and longitude."""
    if cfg.mechanism != "rp":
        raise ValidationError(f"expected an 'rp' config, got {cfg.mechanism!r}")
    return _apply_per_trajectory(df, cfg, lambda rng, n: rng.uniform(cfg.a, cfg.b, size=(n, 2)))


def perturb_gaussian(df: pd.DataFrame, cfg: NoiseConfig) -> pd.DataFrame:
    """Independent N(mu, sigma^2) noise on each coordinate."""
    if cfg.mechanism != "gg":
        raise ValidationError(f"expected a 'gg' config, got {cfg.mechanism!r}")
    return _apply_per_trajectory(df, cfg, lambda rng, n: rng.normal(cfg.mu, cfg.sigma, size=(n, 2)))


def apply_ldp(df: pd.DataFrame, cfg: NoiseConfig) -> pd.DataFrame:
    """Independent planar Laplace offset per point (location-scale privacy)."""
    if cfg.mechanism != "ldp":
        raise ValidationError(f"expected an 'ldp' config, got {cfg.mechanism!r}")
    return _apply_per_trajectory(df, cfg, lambda rng, n: _planar_offsets(rng, cfg.epsilon, n))


def apply_tdp(df: pd.DataFrame, cfg: NoiseConfig) -> pd.DataFrame:
    """One planar Laplace offset per trajectory, applied rigidly to all its points."""
    if cfg.mechanism != "tdp":
        raise ValidationError(f"expected a 'tdp' config, got {cfg.mechanism!r}")

    def draw(rng, n):
        return np.tile(_planar_offsets(rng, cfg.epsilon, 1), (n, 1))

    return _apply_per_trajectory(df, cfg, draw)


def generate_tka(anonymized, grid: GridSystem, sample_size: int = 64, seed: int = 0) -> pd.DataFrame:
    """Trajectory K-anonymization: shared conditional sampling, random matching.

    Uses exactly the generator's per-(user, hour) sampling streams, then links
    adjacent hours with uniformly random permutations instead of learned
    matching, so per-hour histograms coincide with generated output while the
    topology is destroyed.
    """
    items = anonymized.items() if hasattr(anonymized, "items") else anonymized
    trajectories = []
    for user_id, matrix in sorted(items):
        sampled = sample_all_hours(matrix, sample_size, seed, user_id)
        tracks = np.empty((sample_size, matrix.hours, 2), dtype=int)
        tracks[:, 0, :] = np.asarray(sampled[0].cells)
        for hour in range(1, matrix.hours):
            rng = substream(seed, "tka-match", user_id, hour)
            order = rng.permutation(sample_size)
            tracks[:, hour, :] = np.asarray(sampled[hour].cells)[order]
        for k in range(sample_size):
            trajectories.append(
                DailyTrajectory(user_id=user_id, day=k, points=tuple(map(tuple, tracks[k])))
            )
    return frame_from_trajectories(trajectories, grid, synthetic=True)


def apply_mechanism(mechanism: str, df: pd.DataFrame, cfg: NoiseConfig | None = None,
                    anonymized=None, grid: GridSystem | None = None,
                    sample_size: int = 64, seed: int = 0) -> pd.DataFrame:
    """Dispatch a mechanism tag to its implementation."""
    cfg = cfg or default_config(mechanism, seed=seed)
    if cfg.mechanism != mechanism:
        cfg = replace(cfg, mechanism=mechanism)
    if mechanism == "rp":
        return perturb_uniform(df, cfg)
    if mechanism == "gg":
        return perturb_gaussian(df, cfg)
    if mechanism == "ldp":
        return apply_ldp(df, cfg)
    if mechanism == "tdp":
        return apply_tdp(df, cfg)
    if mechanism == "tka":
        if anonymized is None or grid is None:
            raise ValidationError("tka requires anonymized matrices and a grid")
        return generate_tka(anonymized, grid, sample_size=sample_size, seed=cfg.seed)
    raise ValidationError(f"unknown mechanism {mechanism!r}")


class NoiseMechanism(BaseEstimator):
    """Transformer-style wrapper over the noise mechanisms (rp, gg, ldp, tdp).

    fit is a no-op; transform maps a trajectory dataset to its protected
    counterpart with the configured noise parameters.
    """

    def __init__(self, mechanism: str = "rp", a: float = -0.02, b: float = 0.02,
                 mu: float = 0.0, sigma: float = 0.02, epsilon: float = 100.0, seed: int = 0):
        self.mechanism = mechanism
        self.a = a
        self.b = b
        self.mu = mu
        self.sigma = sigma
        self.epsilon = epsilon
        self.seed = seed

    def _config(self) -> NoiseConfig:
        return NoiseConfig(
            mechanism=self.mechanism, a=self.a, b=self.b, mu=self.mu,
            sigma=self.sigma, epsilon=self.epsilon, seed=self.seed,
        )

    def fit(self, df: pd.DataFrame, y=None):
        self._config()  # validate eagerly
        return self

    def transform(self, df: pd.DataFrame) -> pd.DataFrame:
        if self.mechanism == "tka":
            raise ValidationError("tka needs matrices; use generate_tka or apply_mechanism")
        return apply_mechanism(self.mechanism, df, self._config())

    def fit_transform(self, df: pd.DataFrame, y=None) -> pd.DataFrame:
        return self.fit(df).transform(df)
