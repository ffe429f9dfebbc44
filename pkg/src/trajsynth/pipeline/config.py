"""Pipeline configuration: a flat key-value text format and its typed view.

Config files are plain text, one ``key = value`` pair per line, ``#`` for
comments. Dotted keys group settings (``world.users``, ``train.epochs``).
Unknown keys are rejected so typos fail fast; every run embeds the config's
hash in its outputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..errors import ConfigInvalidError
from ..mechanisms import MECHANISMS
from ..training import TrainConfig
from .world import SyntheticWorldSpec


@dataclass(frozen=True)
class PipelineConfig:
    # world / input
    input_csv: str = ""  # empty: generate the synthetic world below
    world_users: int = 20
    world_days: int = 80
    world_noise: float = 0.05
    grid_cells: int = 16
    grid_hours: int = 24
    lat_min: float = 0.0
    lat_max: float = 0.16
    lon_min: float = 0.0
    lon_max: float = 0.16
    # anonymization
    k: int = 5
    n_clusters: int = 0  # 0: floor(users / 2k)
    # generation
    sample_size: int = 64
    mechanisms: tuple = MECHANISMS
    # training
    train_epochs: int = 50
    train_lr: float = 2e-4
    train_n_critic: int = 5
    train_clip: float = 0.01
    train_batch_trajectories: int = 16
    encoding_dim: int = 32
    n_heads: int = 8
    cond_dim: int = 64
    test_fraction: float = 0.2
    # evaluation
    od_regions: int = 16
    ssim_sigmas: tuple = (128.0, 96.0, 64.0)
    w2_max_side: int = 64
    hlc_eps: float = 0.02
    hlc_min_pts: int = 4
    tul_epochs: int = 30
    tul_lr: float = 1e-3
    fm_k: int = 8
    fm_epochs: int = 10
    fm_lr: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigInvalidError(f"k must be >= 1, got {self.k}")
        bad = [m for m in self.mechanisms if m not in MECHANISMS]
        if bad:
            raise ConfigInvalidError(f"unknown mechanisms: {bad}")
        if not 0 < self.test_fraction < 1:
            raise ConfigInvalidError(f"test_fraction must be in (0, 1), got {self.test_fraction}")

    def world_spec(self) -> SyntheticWorldSpec:
        return SyntheticWorldSpec(
            n_users=self.world_users, n_days=self.world_days,
            cells_per_side=self.grid_cells, hours_per_day=self.grid_hours,
            noise_rate=self.world_noise,
            lat_min=self.lat_min, lat_max=self.lat_max,
            lon_min=self.lon_min, lon_max=self.lon_max,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.train_epochs, lr=self.train_lr, n_critic=self.train_n_critic,
            clip=self.train_clip, batch_trajectories=self.train_batch_trajectories,
            encoding_dim=self.encoding_dim, n_heads=self.n_heads,
            cond_dim=self.cond_dim, seed=self.seed,
        )

    def serialize(self) -> str:
        lines = []
        for key, canonical in sorted(_KEY_MAP.items()):
            value = getattr(self, canonical)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()[:16]


_KEY_MAP = {
    "input.csv": "input_csv",
    "world.users": "world_users",
    "world.days": "world_days",
    "world.noise": "world_noise",
    "grid.cells": "grid_cells",
    "grid.hours": "grid_hours",
    "grid.lat_min": "lat_min",
    "grid.lat_max": "lat_max",
    "grid.lon_min": "lon_min",
    "grid.lon_max": "lon_max",
    "kama.k": "k",
    "kama.clusters": "n_clusters",
    "generate.sample_size": "sample_size",
    "mask.mechanisms": "mechanisms",
    "train.epochs": "train_epochs",
    "train.lr": "train_lr",
    "train.n_critic": "train_n_critic",
    "train.clip": "train_clip",
    "train.batch_trajectories": "train_batch_trajectories",
    "model.encoding_dim": "encoding_dim",
    "model.heads": "n_heads",
    "model.cond_dim": "cond_dim",
    "split.test_fraction": "test_fraction",
    "evaluate.od_regions": "od_regions",
    "evaluate.ssim_sigmas": "ssim_sigmas",
    "evaluate.w2_max_side": "w2_max_side",
    "attack.hlc_eps": "hlc_eps",
    "attack.hlc_min_pts": "hlc_min_pts",
    "attack.tul_epochs": "tul_epochs",
    "attack.tul_lr": "tul_lr",
    "utility.fm_k": "fm_k",
    "utility.fm_epochs": "fm_epochs",
    "utility.fm_lr": "fm_lr",
    "seed": "seed",
}


def _coerce(canonical: str, raw: str):
    template = PipelineConfig()
    current = getattr(template, canonical)
    raw = raw.strip()
    if isinstance(current, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if canonical == "ssim_sigmas":
            return tuple(float(p) for p in parts)
        return tuple(parts)
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def parse_config_text(text: str) -> PipelineConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigInvalidError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        canonical = _KEY_MAP.get(key)
        if canonical is None:
            raise ConfigInvalidError(f"line {lineno}: unknown key {key!r}")
        try:
            values[canonical] = _coerce(canonical, raw)
        except ValueError as exc:
            raise ConfigInvalidError(f"line {lineno}: {exc}") from None
    return PipelineConfig(**values)


def load_config(path) -> PipelineConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))
