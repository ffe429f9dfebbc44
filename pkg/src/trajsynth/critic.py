"""Trajectory critic: scores (trajectory, mobility matrix) pairs with an
unbounded scalar whose real-minus-synthetic batch gap estimates how far the
generated topology distribution sits from the real one.

Architecture: per-point spatiotemporal encoding (same design as the
generator, separate weights) -> self-attention over the trajectory's own
points -> GRU kept at its last state -> concatenation with a residual-conv
embedding of the conditioning matrix -> dense, relu, dense to one scalar.
No squashing at the output; the score is a regression target.
"""

from __future__ import annotations

import numpy as np

from .core.grid import GridSystem
from .core.mobility import MobilityMatrix
from .errors import ShapeMismatchError, ValidationError
from .nn import (
    DiffArray,
    ModelParams,
    add_conv_encoder,
    add_dense,
    add_gru,
    add_mhsa,
    apply_dense,
    arr_mean,
    concat,
    gru_step,
    mhsa,
    relu,
    reshape,
    residual_conv_encoder,
    residual_layernorm,
    straight_through,
    take,
)

DEFAULT_COND_DIM = 64
DEFAULT_HEAD_HIDDEN = 64


def build_critic_params(
    seed: int,
    hours: int,
    encoding_dim: int = 32,
    cond_dim: int = DEFAULT_COND_DIM,
    head_hidden: int = DEFAULT_HEAD_HIDDEN,
    conv_widths: tuple = (32, 32, 64),
    prefix: str = "crt",
) -> ModelParams:
    d_model = 2 * encoding_dim
    params = ModelParams(seed=seed)
    add_dense(params, f"{prefix}/enc_loc", 2, encoding_dim)
    add_dense(params, f"{prefix}/enc_time", hours, encoding_dim)
    add_mhsa(params, f"{prefix}/attn", d_model)
    params.add(f"{prefix}/ln/g", np.ones(d_model))
    params.zeros(f"{prefix}/ln/b", (d_model,))
    add_gru(params, f"{prefix}/gru", d_model, d_model)
    add_conv_encoder(params, f"{prefix}/cond", in_channels=hours, embedding_dim=cond_dim, widths=conv_widths)
    add_dense(params, f"{prefix}/head1", d_model + cond_dim, head_hidden)
    add_dense(params, f"{prefix}/head2", head_hidden, 1)
    return params


def trajectory_inputs(trajectories, grid: GridSystem) -> tuple[np.ndarray, np.ndarray]:
    """(B, T, 2) unit-square coordinates and (B, T, T_hours) one-hot hours."""
    batch = len(trajectories)
    hours = grid.hours_per_day
    loc = np.empty((batch, hours, 2))
    time = np.zeros((batch, hours, hours))
    for b, t in enumerate(trajectories):
        if len(t.points) != hours:
            raise ShapeMismatchError(
                f"trajectory has {len(t.points)} points, conditioning expects {hours}"
            )
        for h, (r, c) in enumerate(t.points):
            loc[b, h] = grid.cell_center_unit(r, c)
            time[b, h, h] = 1.0
    return loc, time


def condition_embedding(matrix: MobilityMatrix, params: ModelParams, prefix: str = "crt") -> DiffArray:
    return residual_conv_encoder(DiffArray(matrix.data), params, f"{prefix}/cond")


def critic_scores(
    loc: np.ndarray,
    time: np.ndarray,
    cond: DiffArray,
    params: ModelParams,
    prefix: str = "crt",
    n_heads: int = 8,
    surrogate: DiffArray | None = None,
) -> DiffArray:
    """Scores for a batch given precomputed inputs and condition embedding.

    ``surrogate`` (B, T, d_model), when given, replaces the backward path of
    the per-point embeddings, leaving forward values untouched; this is how
    generator updates see gradients through an assembled discrete batch.
    """
    loc_emb = relu(apply_dense(params, f"{prefix}/enc_loc", DiffArray(loc)))
    time_emb = relu(apply_dense(params, f"{prefix}/enc_time", DiffArray(time)))
    emb = concat([loc_emb, time_emb], axis=-1)
    if surrogate is not None:
        emb = straight_through(emb, surrogate)
    ctx = mhsa(emb, params, f"{prefix}/attn", n_heads)
    ctx = residual_layernorm(emb, ctx, params[f"{prefix}/ln/g"], params[f"{prefix}/ln/b"])
    batch, hours, d_model = ctx.shape
    h = DiffArray(np.zeros((batch, d_model)))
    for step in range(hours):
        h = gru_step(take(ctx, (slice(None), step)), h, params, f"{prefix}/gru")
    cond_rows = DiffArray(np.ones((batch, 1))) * reshape(cond, (1, -1))
    merged = concat([h, cond_rows], axis=-1)
    out = apply_dense(params, f"{prefix}/head2", relu(apply_dense(params, f"{prefix}/head1", merged)))
    return reshape(out, (batch,))


def critic_forward(
    trajectory,
    matrix: MobilityMatrix,
    grid: GridSystem,
    params: ModelParams,
    prefix: str = "crt",
    n_heads: int = 8,
) -> DiffArray:
    """Scalar score of one trajectory under its conditioning matrix."""
    loc, time = trajectory_inputs([trajectory], grid)
    cond = condition_embedding(matrix, params, prefix)
    return reshape(critic_scores(loc, time, cond, params, prefix, n_heads), ())


def critic_batch_gap(
    real_trajectories,
    synthetic_trajectories,
    matrix: MobilityMatrix,
    grid: GridSystem,
    params: ModelParams,
    prefix: str = "crt",
    n_heads: int = 8,
) -> DiffArray:
    """mean score over the real batch minus mean over the synthetic batch."""
    if not real_trajectories or not synthetic_trajectories:
        raise ValidationError("both batches must be non-empty")
    cond = condition_embedding(matrix, params, prefix)
    real_loc, real_time = trajectory_inputs(real_trajectories, grid)
    synth_loc, synth_time = trajectory_inputs(synthetic_trajectories, grid)
    real = critic_scores(real_loc, real_time, cond, params, prefix, n_heads)
    synth = critic_scores(synth_loc, synth_time, cond, params, prefix, n_heads)
    return arr_mean(real) - arr_mean(synth)


class TrajectoryCritic:
    """Bundles critic parameters with its architectural settings."""

    def __init__(self, encoding_dim: int = 32, cond_dim: int = DEFAULT_COND_DIM,
                 n_heads: int = 8, conv_widths: tuple = (32, 32, 64), seed: int = 0):
        self.encoding_dim = encoding_dim
        self.cond_dim = cond_dim
        self.n_heads = n_heads
        self.conv_widths = conv_widths
        self.seed = seed

    def get_params(self, deep: bool = True) -> dict:
        return {
            "encoding_dim": self.encoding_dim,
            "cond_dim": self.cond_dim,
            "n_heads": self.n_heads,
            "conv_widths": self.conv_widths,
            "seed": self.seed,
        }

    def init_params(self, hours: int) -> "TrajectoryCritic":
        self.params_ = build_critic_params(
            self.seed, hours, encoding_dim=self.encoding_dim,
            cond_dim=self.cond_dim, conv_widths=self.conv_widths,
        )
        self.hours_ = hours
        return self

    def score(self, trajectory, matrix: MobilityMatrix, grid: GridSystem) -> float:
        return float(critic_forward(trajectory, matrix, grid, self.params_, n_heads=self.n_heads).values)
