"""Factorization machine for next-location recommendation, with AUC scoring.

Features are one-hot blocks (user, current cell, hour, candidate next cell);
the model scores second-order feature interactions through latent vectors and
is trained by SGD on logistic loss. Utility of a protected dataset is the
AUC a machine trained on it achieves on raw test examples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator

from ..core.dataset import attach_cells
from ..core.grid import GridSystem
from ..errors import DimensionMismatchError, ValidationError
from ..rng import substream


@dataclass
class FMModel:
    bias: float
    weights: np.ndarray  # (n_features,)
    latent: np.ndarray  # (n_features, k)

    @property
    def n_features(self) -> int:
        return len(self.weights)


def fm_predict(model: FMModel, active: np.ndarray) -> float:
    """Score one example given its active one-hot feature indices.

    Uses the O(k n) pairwise rewrite: for unit-valued features the
    interaction term is (sum of latents)^2 minus the sum of squared latents,
    halved per latent dimension.
    """
    active = np.asarray(active, dtype=int)
    if active.size and (active.min() < 0 or active.max() >= model.n_features):
        raise DimensionMismatchError(
            f"feature index out of range [0, {model.n_features})"
        )
    rows = model.latent[active]
    sums = rows.sum(axis=0)
    interactions = 0.5 * float((sums * sums - (rows * rows).sum(axis=0)).sum())
    return model.bias + float(model.weights[active].sum()) + interactions


def fm_predict_naive(model: FMModel, active: np.ndarray) -> float:
    """Literal double sum over feature pairs; the test oracle for fm_predict."""
    active = np.asarray(active, dtype=int)
    out = model.bias + float(model.weights[active].sum())
    for a in range(len(active)):
        for b in range(a + 1, len(active)):
            out += float(model.latent[active[a]] @ model.latent[active[b]])
    return out


def fm_predict_batch(model: FMModel, active_matrix: np.ndarray) -> np.ndarray:
    """Vectorized fm_predict over rows of equal-arity active-index lists."""
    active_matrix = np.asarray(active_matrix, dtype=int)
    rows = model.latent[active_matrix]  # (B, arity, k)
    sums = rows.sum(axis=1)
    interactions = 0.5 * (sums * sums - (rows * rows).sum(axis=1)).sum(axis=1)
    return model.bias + model.weights[active_matrix].sum(axis=1) + interactions


def fm_train(
    examples: np.ndarray,
    labels: np.ndarray,
    n_features: int,
    k: int = 8,
    epochs: int = 10,
    lr: float = 0.05,
    seed: int = 0,
) -> FMModel:
    """SGD on logistic loss over (active-index rows, 0/1 labels)."""
    examples = np.asarray(examples, dtype=int)
    labels = np.asarray(labels, dtype=float)
    if examples.size and examples.max() >= n_features:
        raise DimensionMismatchError("feature index exceeds n_features")
    rng = substream(seed, "fm-init")
    model = FMModel(
        bias=0.0,
        weights=np.zeros(n_features),
        latent=rng.normal(scale=0.01, size=(n_features, k)),
    )
    order_rng = substream(seed, "fm-order")
    for _ in range(epochs):
        for i in order_rng.permutation(len(labels)):
            active = examples[i]
            rows = model.latent[active]
            sums = rows.sum(axis=0)
            score = model.bias + model.weights[active].sum() + 0.5 * ((sums * sums - (rows * rows).sum(axis=0)).sum())
            grad = 1.0 / (1.0 + np.exp(-score)) - labels[i]
            model.bias -= lr * grad
            model.weights[active] -= lr * grad
            model.latent[active] -= lr * grad * (sums[None, :] - rows)
    return model


def auc(scores, labels) -> float:
    """Rank-statistic AUC with midranks on ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    positives = labels == 1
    n_pos = int(positives.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs both positive and negative labels")
    from scipy.stats import rankdata

    ranks = rankdata(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass(frozen=True)
class FeatureSpace:
    """Fixed one-hot block layout shared by train and evaluation examples."""

    users: tuple
    n_cells: int
    hours: int

    @property
    def n_features(self) -> int:
        return len(self.users) + 2 * self.n_cells + self.hours

    def encode(self, user_idx: int, current_cell: int, hour: int, candidate_cell: int) -> np.ndarray:
        u = len(self.users)
        return np.array(
            [
                user_idx,
                u + current_cell,
                u + self.n_cells + hour,
                u + self.n_cells + self.hours + candidate_cell,
            ]
        )


def recommendation_examples(
    df: pd.DataFrame, grid: GridSystem, space: FeatureSpace, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Positive/negative CTR pairs from hourly transitions, 1:1 per transition.

    Positives are the observed next cells; each negative swaps in a uniform
    random different cell as the candidate.
    """
    user_index = {u: i for i, u in enumerate(space.users)}
    unknown = set(df["user_id"].astype(str)) - set(user_index)
    if unknown:
        raise ValidationError(f"users outside the feature space: {sorted(unknown)[:5]}")
    work = attach_cells(df, grid).sort_values(["user_id", "day", "hour"], kind="mergesort")
    cell = (work["row"].to_numpy() * grid.n + work["col"].to_numpy()).astype(int)
    users = work["user_id"].astype(str).to_numpy()
    days = work["day"].to_numpy()
    hours = work["hour"].to_numpy()
    same = (users[1:] == users[:-1]) & (days[1:] == days[:-1]) & (hours[1:] == hours[:-1] + 1)
    examples, labels = [], []
    n_cells = space.n_cells
    rng = substream(seed, "fm-negatives")
    for i in np.nonzero(same)[0]:
        uid = user_index[users[i]]
        pos = space.encode(uid, cell[i], int(hours[i]), cell[i + 1])
        examples.append(pos)
        labels.append(1.0)
        negative = int(rng.integers(n_cells - 1))
        if negative >= cell[i + 1]:
            negative += 1
        examples.append(space.encode(uid, cell[i], int(hours[i]), negative))
        labels.append(0.0)
    return np.array(examples, dtype=int), np.array(labels)


class FactorizationMachine(BaseEstimator):
    """Estimator wrapper storing the shared feature space with the model."""

    def __init__(self, k: int = 8, epochs: int = 10, lr: float = 0.05, seed: int = 0):
        self.k = k
        self.epochs = epochs
        self.lr = lr
        self.seed = seed

    def fit(self, examples: np.ndarray, labels: np.ndarray, n_features: int):
        self.model_ = fm_train(
            examples, labels, n_features, k=self.k, epochs=self.epochs,
            lr=self.lr, seed=self.seed,
        )
        return self

    def predict(self, examples: np.ndarray) -> np.ndarray:
        return fm_predict_batch(self.model_, examples)

    def score_auc(self, examples: np.ndarray, labels: np.ndarray) -> float:
        return auc(self.predict(examples), labels)
