"""Adversarial training loop coupling the trajectory generator and critic.

Each step alternates ``n_critic`` critic ascents on the real-minus-synthetic
score gap (followed by hard weight clipping) with one generator descent on
the negated synthetic score. The assembled synthetic trajectories are
discrete, so the generator update routes gradients through a straight-through
surrogate: the critic's forward pass sees the discrete batch unchanged while
the backward pass flows into the generator's track-aligned GRU states, and
through them into its attention and encoders. Matching permutations are
treated as constants.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd

from .core.dataset import daily_trajectories, frame_from_trajectories
from .core.grid import GridSystem
from .critic import build_critic_params, condition_embedding, critic_scores, trajectory_inputs
from .errors import ConfigInvalidError, NonFiniteLossError, ValidationError
from .generator import build_generator_params, generate_tracks
from .nn import ModelParams, RMSProp, arr_mean, clip_weights, stack, swapaxes
from .rng import substream


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 2e-4
    n_critic: int = 5
    clip: float = 0.01
    batch_users: int = 1
    batch_trajectories: int = 16
    encoding_dim: int = 32
    n_heads: int = 8
    cond_dim: int = 64
    conv_widths: tuple = (32, 32, 64)
    cost_mode: str = "hidden"
    seed: int = 0

    def __post_init__(self):
        numeric = {
            "epochs": self.epochs, "lr": self.lr, "n_critic": self.n_critic,
            "clip": self.clip, "batch_users": self.batch_users,
            "batch_trajectories": self.batch_trajectories,
            "encoding_dim": self.encoding_dim, "n_heads": self.n_heads,
            "cond_dim": self.cond_dim,
        }
        for name, value in numeric.items():
            if value < 0 or (name != "epochs" and value == 0):
                raise ConfigInvalidError(f"{name} must be positive, got {value}")

    def hash(self) -> str:
        payload = repr(sorted(asdict(self).items())).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class TrainLog:
    """Append-only per-step records; CSV-serializable."""

    config_hash: str
    seed: int
    rows: list = field(default_factory=list)

    def append(self, step: int, epoch: int, unit: str, critic_gap: float,
               generator_loss: float, wall_time_s: float) -> None:
        self.rows.append(
            {
                "step": step,
                "epoch": epoch,
                "unit": unit,
                "critic_gap": critic_gap,
                "generator_loss": generator_loss,
                "wall_time_s": wall_time_s,
                "seed": self.seed,
                "config_hash": self.config_hash,
            }
        )

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            self.rows,
            columns=[
                "step", "epoch", "unit", "critic_gap", "generator_loss",
                "wall_time_s", "seed", "config_hash",
            ],
        )

    def gaps(self) -> np.ndarray:
        return np.array([r["critic_gap"] for r in self.rows])


def derived_seed(master: int, *keys) -> int:
    return int(substream(master, *keys).integers(2**62))


def _check_finite(value: float, what: str, step: int) -> float:
    if not np.isfinite(value):
        raise NonFiniteLossError(f"{what} became {value!r} at step {step}")
    return value


def train(
    dataset: pd.DataFrame,
    matrices: dict,
    grid: GridSystem,
    config: TrainConfig,
    generator_params: ModelParams | None = None,
    critic_params: ModelParams | None = None,
) -> tuple[ModelParams, ModelParams, TrainLog]:
    """Run the adversarial loop over per-user conditional batches.

    ``dataset`` is the training split; ``matrices`` maps each user to their
    conditioning matrix. Returns trained generator/critic parameters and the
    step log. Deterministic for a fixed (config, seed): every random draw
    comes from a stream keyed by (seed, epoch, step, purpose).
    """
    users = sorted(matrices)
    if not users:
        raise ValidationError("no users to train on")
    dailies: dict[str, list] = {}
    for t in daily_trajectories(dataset, grid):
        dailies.setdefault(t.user_id, []).append(t)
    missing = [u for u in users if not dailies.get(u)]
    if missing:
        raise ValidationError(f"users without trajectories: {missing[:5]}")

    gen = generator_params or build_generator_params(config.seed, grid.hours_per_day, config.encoding_dim)
    crt = critic_params or build_critic_params(
        config.seed, grid.hours_per_day, encoding_dim=config.encoding_dim,
        cond_dim=config.cond_dim, conv_widths=config.conv_widths,
    )
    opt_gen = RMSProp(lr=config.lr)
    opt_crt = RMSProp(lr=config.lr)
    log = TrainLog(config_hash=config.hash(), seed=config.seed)

    step = 0
    start = time.perf_counter()
    for epoch in range(config.epochs):
        for lo in range(0, len(users), config.batch_users):
            batch_users = users[lo : lo + config.batch_users]
            last_gap = 0.0
            for it in range(config.n_critic):
                crt.zero_grad()
                gap_terms = []
                for user in batch_users:
                    real = _draw_real(dailies[user], config, epoch, step, it, user)
                    synth = generate_tracks(
                        matrices[user], grid, gen,
                        sample_size=config.batch_trajectories,
                        seed=derived_seed(config.seed, "synth", epoch, step, it),
                        n_heads=config.n_heads, cost_mode=config.cost_mode,
                        stream_id=user,
                    ).trajectories
                    cond = condition_embedding(matrices[user], crt)
                    real_loc, real_time = trajectory_inputs(real, grid)
                    synth_loc, synth_time = trajectory_inputs(synth, grid)
                    real_scores = critic_scores(real_loc, real_time, cond, crt, n_heads=config.n_heads)
                    synth_scores = critic_scores(synth_loc, synth_time, cond, crt, n_heads=config.n_heads)
                    gap_terms.append(arr_mean(real_scores) - arr_mean(synth_scores))
                gap = gap_terms[0] if len(gap_terms) == 1 else sum(gap_terms[1:], gap_terms[0]) * (1.0 / len(gap_terms))
                last_gap = _check_finite(float(gap.values), "critic gap", step)
                (-gap).backward()
                opt_crt.step(crt)
                clip_weights(crt, config.clip)

            gen.zero_grad()
            loss_terms = []
            for user in batch_users:
                result = generate_tracks(
                    matrices[user], grid, gen,
                    sample_size=config.batch_trajectories,
                    seed=derived_seed(config.seed, "gen-update", epoch, step),
                    n_heads=config.n_heads, cost_mode=config.cost_mode,
                    stream_id=user,
                )
                # (T, S, d) -> (S, T, d): per-track surrogate sequence
                surrogate = swapaxes(stack(result.hidden_states, axis=0), 0, 1)
                cond = condition_embedding(matrices[user], crt)
                loc, hours = trajectory_inputs(result.trajectories, grid)
                scores = critic_scores(
                    loc, hours, cond, crt, n_heads=config.n_heads, surrogate=surrogate
                )
                loss_terms.append(-arr_mean(scores))
            gen_loss = loss_terms[0] if len(loss_terms) == 1 else sum(loss_terms[1:], loss_terms[0]) * (1.0 / len(loss_terms))
            _check_finite(float(gen_loss.values), "generator loss", step)
            gen_loss.backward()
            opt_gen.step(gen)

            log.append(
                step=step, epoch=epoch, unit=",".join(batch_users),
                critic_gap=last_gap, generator_loss=float(gen_loss.values),
                wall_time_s=time.perf_counter() - start,
            )
            step += 1
    return gen, crt, log


def _draw_real(trajectories: list, config: TrainConfig, epoch: int, step: int, it: int, user: str) -> list:
    rng = substream(config.seed, "real", epoch, step, it, user)
    idx = rng.integers(0, len(trajectories), size=config.batch_trajectories)
    return [trajectories[i] for i in idx]


def evaluate_checkpoint(
    generator_params: ModelParams,
    matrices: dict,
    grid: GridSystem,
    sample_size: int = 64,
    seed: int = 0,
    n_heads: int = 8,
    cost_mode: str = "hidden",
) -> pd.DataFrame:
    """Pure inference: synthesize ``sample_size`` trajectories per user.

    Emits the ingestion CSV schema plus a synthetic=1 column, with user_id
    naming the user whose (possibly anonymized) matrix conditioned the
    tracks and day numbering the tracks.
    """
    trajectories = []
    for user in sorted(matrices):
        result = generate_tracks(
            matrices[user], grid, generator_params,
            sample_size=sample_size, seed=seed,
            n_heads=n_heads, cost_mode=cost_mode, stream_id=user,
        )
        trajectories.extend(result.trajectories)
    return frame_from_trajectories(trajectories, grid, synthetic=True)


def split_dataset(df: pd.DataFrame, test_fraction: float = 0.2, seed: int = 0) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Per-user split of whole (user, day) trajectories into train/test."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigInvalidError(f"test_fraction must be in (0, 1), got {test_fraction}")
    train_keys = []
    test_keys = []
    for user, days in df.groupby("user_id")["day"].unique().items():
        days = sorted(int(d) for d in days)
        rng = substream(seed, "split", user)
        rng.shuffle(days)
        cut = max(1, int(round(len(days) * test_fraction))) if len(days) > 1 else 0
        test_keys += [(user, d) for d in days[:cut]]
        train_keys += [(user, d) for d in days[cut:]]
    key = pd.MultiIndex.from_frame(df[["user_id", "day"]])
    is_test = key.isin(test_keys)
    return df[~is_test].copy(), df[is_test].copy()


class AdversarialSynthesizer:
    """fit/generate wrapper: train on per-user matrices, then synthesize from
    any matrix set (typically the K-anonymized averages)."""

    def __init__(self, config: TrainConfig | None = None, sample_size: int = 64):
        self.config = config or TrainConfig()
        self.sample_size = sample_size

    def get_params(self, deep: bool = True) -> dict:
        return {"config": self.config, "sample_size": self.sample_size}

    def fit(self, dataset: pd.DataFrame, matrices: dict, grid: GridSystem):
        self.generator_params_, self.critic_params_, self.log_ = train(
            dataset, matrices, grid, self.config
        )
        self.grid_ = grid
        return self

    def generate(self, matrices: dict, seed: int = 0) -> pd.DataFrame:
        return evaluate_checkpoint(
            self.generator_params_, matrices, self.grid_,
            sample_size=self.sample_size, seed=seed,
            n_heads=self.config.n_heads, cost_mode=self.config.cost_mode,
        )
