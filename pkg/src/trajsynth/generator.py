"""Trajectory generator: conditional sampling from mobility matrices, learned
point embeddings with global-context attention, and recurrent bipartite
matching that links each hour's sampled points to the next hour's.

Matching runs hour by hour: a GRU carries each partial track's history, the
cost between a track and a candidate next point is the Euclidean distance
between the track's hidden state and the candidate's context-aware embedding,
and an optimal assignment reorders the next hour's points. Because matching
only permutes sampled points, the per-hour spatial distribution of the output
is exactly the sampled one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core.grid import GridSystem
from .core.mobility import MobilityMatrix
from .core.trajectory import DailyTrajectory
from .errors import NonFiniteError, ValidationError, ZeroSliceError
from .nn import (
    DiffArray,
    ModelParams,
    add_dense,
    add_gru,
    add_mhsa,
    apply_dense,
    concat,
    gather_rows,
    gru_step,
    mhsa,
    relu,
    residual_layernorm,
)
from .rng import substream

DEFAULT_SAMPLE_SIZE = 64
DEFAULT_ENCODING_DIM = 32
DEFAULT_HEADS = 8
COST_MODES = ("hidden", "embedding")


@dataclass(frozen=True)
class SampledPointSet:
    """Fixed-size draw of cells from one hour-slice, with their source probabilities."""

    hour: int
    cells: tuple
    probabilities: tuple

    def __len__(self) -> int:
        return len(self.cells)


@dataclass(frozen=True)
class Assignment:
    """A perfect matching: track i pairs with next-hour point permutation[i]."""

    permutation: tuple
    total_cost: float

    def __post_init__(self):
        if sorted(self.permutation) != list(range(len(self.permutation))):
            raise ValidationError("assignment is not a permutation")


def conditional_sample(matrix: MobilityMatrix, hour: int, sample_size: int, seed) -> SampledPointSet:
    """Draw ``sample_size`` cells i.i.d. with replacement from the hour-slice.

    ``seed`` may be an integer or a numpy Generator; integer seeds derive a
    stream keyed by (matrix user, hour) so different hours and users never
    share draws.
    """
    if not (0 <= hour < matrix.hours):
        raise ValidationError(f"hour {hour} outside [0, {matrix.hours})")
    slice_ = matrix.slice_at(hour)
    total = slice_.sum()
    if total <= 0.0:
        raise ZeroSliceError(f"hour {hour} of {matrix.user_id!r} has no probability mass")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "sample", matrix.user_id, hour)
    flat = slice_.reshape(-1) / total
    n = matrix.n
    idx = rng.choice(n * n, size=sample_size, replace=True, p=flat)
    cells = tuple((int(i // n), int(i % n)) for i in idx)
    probs = tuple(float(slice_[r, c]) for r, c in cells)
    return SampledPointSet(hour=hour, cells=cells, probabilities=probs)


def build_generator_params(
    seed: int,
    hours: int,
    encoding_dim: int = DEFAULT_ENCODING_DIM,
    prefix: str = "gen",
) -> ModelParams:
    """Parameter set for the encoder, attention, and matching GRU."""
    d_model = 2 * encoding_dim
    params = ModelParams(seed=seed)
    add_dense(params, f"{prefix}/enc_loc", 2, encoding_dim)
    add_dense(params, f"{prefix}/enc_time", hours, encoding_dim)
    add_mhsa(params, f"{prefix}/attn", d_model)
    params.add(f"{prefix}/ln/g", np.ones(d_model))
    params.zeros(f"{prefix}/ln/b", (d_model,))
    add_gru(params, f"{prefix}/gru", d_model, d_model)
    return params


def encode_spatiotemporal(
    points: SampledPointSet,
    grid: GridSystem,
    params: ModelParams,
    prefix: str = "gen",
) -> DiffArray:
    """Per-point embedding: unit-square cell center and one-hot hour, each through
    its shared dense+relu encoder, concatenated to d_model columns."""
    n = len(points)
    loc = np.array([grid.cell_center_unit(r, c) for r, c in points.cells])
    time = np.zeros((n, grid.hours_per_day))
    if not (0 <= points.hour < grid.hours_per_day):
        raise ValidationError(f"hour {points.hour} outside [0, {grid.hours_per_day})")
    time[:, points.hour] = 1.0
    loc_emb = relu(apply_dense(params, f"{prefix}/enc_loc", DiffArray(loc)))
    time_emb = relu(apply_dense(params, f"{prefix}/enc_time", DiffArray(time)))
    return concat([loc_emb, time_emb], axis=-1)


def global_context(
    embeddings: DiffArray,
    params: ModelParams,
    prefix: str = "gen",
    n_heads: int = DEFAULT_HEADS,
) -> DiffArray:
    """Residual layer-normalized self-attention over one hour's point set."""
    attended = mhsa(embeddings, params, f"{prefix}/attn", n_heads)
    return residual_layernorm(embeddings, attended, params[f"{prefix}/ln/g"], params[f"{prefix}/ln/b"])


def lsa_solve(cost: np.ndarray) -> Assignment:
    """Minimum-total-cost perfect matching of a square cost matrix."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValidationError(f"cost matrix must be square, got {cost.shape}")
    if not np.isfinite(cost).all():
        raise NonFiniteError("cost matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    perm = tuple(int(c) for c in cols[np.argsort(rows)])
    total = float(cost[np.arange(len(perm)), perm].sum())
    return Assignment(permutation=perm, total_cost=total)


@dataclass
class GenerationResult:
    """Assembled tracks plus the differentiable internals used for training."""

    trajectories: list
    sampled: list
    assignments: list
    aligned_embeddings: list  # per hour, DiffArray (sample_size, d_model), track-aligned
    hidden_states: list  # per hour, DiffArray (sample_size, d_model), track-aligned

    def per_hour_cells(self, hour: int) -> list:
        return [t.points[hour] for t in self.trajectories]


def recurrent_match(
    embeddings: list,
    sampled: list,
    params: ModelParams,
    prefix: str = "gen",
    cost_mode: str = "hidden",
    user_id: str = "",
) -> GenerationResult:
    """Assemble sampled per-hour points into tracks via recurrent optimal matching.

    ``cost_mode`` selects the representation of the already-matched side:
    ``"hidden"`` uses the GRU state (history-aware), ``"embedding"`` the raw
    context-aware embedding of the latest point.
    """
    if cost_mode not in COST_MODES:
        raise ValidationError(f"cost_mode must be one of {COST_MODES}, got {cost_mode!r}")
    if len(embeddings) != len(sampled) or not embeddings:
        raise ValidationError("need one embedding set per sampled hour")
    sizes = {e.shape[0] for e in embeddings} | {len(s) for s in sampled}
    if len(sizes) != 1:
        raise ValidationError(f"sample sizes disagree across hours: {sorted(sizes)}")
    hours = [s.hour for s in sampled]
    if hours != list(range(hours[0], hours[0] + len(hours))):
        raise ValidationError(f"hour sequence must be contiguous, got {hours}")

    size = sizes.pop()
    d_model = embeddings[0].shape[1]
    aligned_emb = [embeddings[0]]
    aligned_cells = [list(sampled[0].cells)]
    h = gru_step(embeddings[0], DiffArray(np.zeros((size, d_model))), params, f"{prefix}/gru")
    hiddens = [h]
    assignments = []
    for j in range(len(embeddings) - 1):
        reference = hiddens[-1] if cost_mode == "hidden" else aligned_emb[-1]
        nxt = embeddings[j + 1]
        diff = reference.values[:, None, :] - nxt.values[None, :, :]
        cost = np.sqrt((diff * diff).sum(axis=2))
        assignment = lsa_solve(cost)
        assignments.append(assignment)
        order = np.asarray(assignment.permutation)
        aligned = gather_rows(nxt, order)
        aligned_emb.append(aligned)
        aligned_cells.append([sampled[j + 1].cells[i] for i in order])
        h = gru_step(aligned, hiddens[-1], params, f"{prefix}/gru")
        hiddens.append(h)

    trajectories = [
        DailyTrajectory(
            user_id=user_id,
            day=k,
            points=tuple(aligned_cells[j][k] for j in range(len(aligned_cells))),
        )
        for k in range(size)
    ]
    return GenerationResult(
        trajectories=trajectories,
        sampled=sampled,
        assignments=assignments,
        aligned_embeddings=aligned_emb,
        hidden_states=hiddens,
    )


def sample_all_hours(matrix: MobilityMatrix, sample_size: int, seed: int, stream_id: str) -> list:
    """One conditional draw per hour, each from a stream keyed by (stream_id, hour).

    The stream id is normally the id of the user the tracks are generated
    for; cluster members sharing an averaged matrix thus get independent
    draws, while any sampler fed the same (seed, stream_id) reproduces
    identical point sets.
    """
    return [
        conditional_sample(matrix, hour, sample_size, substream(seed, "sample", stream_id, hour))
        for hour in range(matrix.hours)
    ]


def generate_tracks(
    matrix: MobilityMatrix,
    grid: GridSystem,
    params: ModelParams,
    sample_size: int = DEFAULT_SAMPLE_SIZE,
    seed: int = 0,
    prefix: str = "gen",
    n_heads: int = DEFAULT_HEADS,
    cost_mode: str = "hidden",
    stream_id: str | None = None,
) -> GenerationResult:
    """Full generation pass: sample, encode, contextualize, and match every hour."""
    stream_id = matrix.user_id if stream_id is None else stream_id
    sampled = sample_all_hours(matrix, sample_size, seed, stream_id)
    embeddings = [
        global_context(encode_spatiotemporal(s, grid, params, prefix), params, prefix, n_heads)
        for s in sampled
    ]
    return recurrent_match(embeddings, sampled, params, prefix, cost_mode, user_id=stream_id)


class TrajectoryGenerator:
    """Estimator-style wrapper bundling parameters and generation settings.

    Parameters
    ----------
    sample_size : tracks generated per matrix.
    encoding_dim : width of each of the location/time encoders; the model
        dimension is twice this.
    n_heads : attention heads in the global-context layer.
    cost_mode : "hidden" (history-aware matching) or "embedding".
    seed : parameter-initialization seed.
    """

    def __init__(
        self,
        sample_size: int = DEFAULT_SAMPLE_SIZE,
        encoding_dim: int = DEFAULT_ENCODING_DIM,
        n_heads: int = DEFAULT_HEADS,
        cost_mode: str = "hidden",
        seed: int = 0,
    ):
        self.sample_size = sample_size
        self.encoding_dim = encoding_dim
        self.n_heads = n_heads
        self.cost_mode = cost_mode
        self.seed = seed

    def get_params(self, deep: bool = True) -> dict:
        return {
            "sample_size": self.sample_size,
            "encoding_dim": self.encoding_dim,
            "n_heads": self.n_heads,
            "cost_mode": self.cost_mode,
            "seed": self.seed,
        }

    def set_params(self, **kwargs):
        for key, value in kwargs.items():
            if key not in self.get_params():
                raise ValidationError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def init_params(self, hours: int) -> "TrajectoryGenerator":
        self.params_ = build_generator_params(self.seed, hours, self.encoding_dim)
        self.hours_ = hours
        return self

    def sample(self, matrix: MobilityMatrix, grid: GridSystem, seed: int = 0,
               stream_id: str | None = None) -> list:
        """Generate ``sample_size`` daily trajectories conditioned on ``matrix``."""
        if not hasattr(self, "params_"):
            self.init_params(grid.hours_per_day)
        result = generate_tracks(
            matrix, grid, self.params_,
            sample_size=self.sample_size, seed=seed,
            n_heads=self.n_heads, cost_mode=self.cost_mode,
            stream_id=stream_id,
        )
        return result.trajectories
