"""Trajectory-user linking attack: a compact sequence classifier that tries
to re-identify the creator of each anonymous daily trajectory.

The classifier reuses the generator's spatiotemporal encoding design (dense +
relu on unit coordinates and one-hot hours) followed by a GRU whose last
state feeds a softmax over users. Relative scores across protected datasets
are what matter: high accuracy on raw data and low accuracy on a protected
dataset means the protection works.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..core.dataset import daily_trajectories
from ..core.grid import GridSystem
from ..errors import LabelMismatchError, ValidationError
from ..nn import (
    DiffArray,
    ModelParams,
    RMSProp,
    add_dense,
    add_gru,
    apply_dense,
    arr_mean,
    concat,
    gru_step,
    log,
    relu,
    softmax,
    take,
)
from ..rng import substream


@dataclass(frozen=True)
class TULReport:
    macro_precision: float
    macro_recall: float
    macro_f1: float
    top1_accuracy: float
    top5_accuracy: float

    def as_dict(self) -> dict:
        return {
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "top1_accuracy": self.top1_accuracy,
            "top5_accuracy": self.top5_accuracy,
        }


@dataclass(frozen=True)
class TulConfig:
    epochs: int = 30
    lr: float = 1e-3
    encoding_dim: int = 32
    batch_size: int = 64
    seed: int = 0


def split_three_one_one(df: pd.DataFrame, seed: int) -> tuple[pd.DataFrame, pd.DataFrame, pd.DataFrame]:
    """Per-user 3:1:1 split of (user, day) trajectory ids."""
    train_keys, val_keys, test_keys = [], [], []
    for user, days in df.groupby("user_id")["day"].unique().items():
        days = sorted(int(d) for d in days)
        rng = substream(seed, "tul-split", user)
        rng.shuffle(days)
        n = len(days)
        n_val = max(1, n // 5) if n >= 3 else 0
        n_test = max(1, n // 5) if n >= 2 else 0
        test_keys += [(user, d) for d in days[:n_test]]
        val_keys += [(user, d) for d in days[n_test : n_test + n_val]]
        train_keys += [(user, d) for d in days[n_test + n_val :]]
    key = pd.MultiIndex.from_frame(df[["user_id", "day"]])
    parts = []
    for keys in (train_keys, val_keys, test_keys):
        parts.append(df[key.isin(keys)].copy())
    return tuple(parts)


def _sequence_tensors(df: pd.DataFrame, grid: GridSystem, labels: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Trajectories as (B, T, 2) coordinates, (B, T, T) hour one-hots, (B,) labels."""
    trajectories = daily_trajectories(df, grid)
    unknown = sorted({t.user_id for t in trajectories} - set(labels))
    if unknown:
        raise LabelMismatchError(f"users missing from the label set: {unknown[:5]}")
    hours = grid.hours_per_day
    loc = np.empty((len(trajectories), hours, 2))
    time = np.zeros((len(trajectories), hours, hours))
    y = np.empty(len(trajectories), dtype=int)
    for b, t in enumerate(trajectories):
        for h, (r, c) in enumerate(t.points):
            loc[b, h] = grid.cell_center_unit(r, c)
            time[b, h, h] = 1.0
        y[b] = labels[t.user_id]
    return loc, time, y


def build_tul_params(seed: int, hours: int, n_users: int, encoding_dim: int = 32) -> ModelParams:
    d_model = 2 * encoding_dim
    params = ModelParams(seed=seed)
    add_dense(params, "tul/enc_loc", 2, encoding_dim)
    add_dense(params, "tul/enc_time", hours, encoding_dim)
    add_gru(params, "tul/gru", d_model, d_model)
    add_dense(params, "tul/head", d_model, n_users)
    return params


def _forward_logits(loc: np.ndarray, time: np.ndarray, params: ModelParams) -> DiffArray:
    loc_emb = relu(apply_dense(params, "tul/enc_loc", DiffArray(loc)))
    time_emb = relu(apply_dense(params, "tul/enc_time", DiffArray(time)))
    emb = concat([loc_emb, time_emb], axis=-1)
    batch, hours, d_model = emb.shape
    h = DiffArray(np.zeros((batch, d_model)))
    for step in range(hours):
        h = gru_step(take(emb, (slice(None), step)), h, params, "tul/gru")
    return apply_dense(params, "tul/head", h)


class TulClassifier:
    """fit/predict sequence classifier used as the linking adversary."""

    def __init__(self, epochs: int = 30, lr: float = 1e-3, encoding_dim: int = 32,
                 batch_size: int = 64, seed: int = 0):
        self.epochs = epochs
        self.lr = lr
        self.encoding_dim = encoding_dim
        self.batch_size = batch_size
        self.seed = seed

    def get_params(self, deep: bool = True) -> dict:
        return {
            "epochs": self.epochs, "lr": self.lr, "encoding_dim": self.encoding_dim,
            "batch_size": self.batch_size, "seed": self.seed,
        }

    def fit(self, train_df: pd.DataFrame, grid: GridSystem, val_df: pd.DataFrame | None = None):
        users = sorted(train_df["user_id"].unique())
        self.labels_ = {u: i for i, u in enumerate(users)}
        self.grid_ = grid
        loc, time, y = _sequence_tensors(train_df, grid, self.labels_)
        params = build_tul_params(self.seed, grid.hours_per_day, len(users), self.encoding_dim)
        opt = RMSProp(lr=self.lr)
        best_score, best_params = -1.0, params.clone()
        rng = substream(self.seed, "tul-batches")
        n = len(y)
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            for lo in range(0, n, self.batch_size):
                idx = order[lo : lo + self.batch_size]
                params.zero_grad()
                logits = _forward_logits(loc[idx], time[idx], params)
                probs = softmax(logits)
                picked = take(probs, (np.arange(len(idx)), y[idx]))
                loss = -arr_mean(log(picked + 1e-12))
                loss.backward()
                opt.step(params)
            if val_df is not None and len(val_df):
                self.params_ = params
                score = self.evaluate(val_df).top1_accuracy
                if score > best_score:
                    best_score, best_params = score, params.clone()
        self.params_ = best_params if val_df is not None and len(val_df) else params
        return self

    def predict_scores(self, df: pd.DataFrame, grid: GridSystem | None = None) -> tuple[np.ndarray, np.ndarray]:
        grid = grid or self.grid_
        loc, time, y = _sequence_tensors(df, grid, self.labels_)
        logits = _forward_logits(loc, time, self.params_)
        return logits.values, y

    def predict(self, df: pd.DataFrame) -> np.ndarray:
        scores, _ = self.predict_scores(df)
        return scores.argmax(axis=1)

    def evaluate(self, df: pd.DataFrame) -> TULReport:
        scores, y = self.predict_scores(df)
        return classification_report(scores, y, n_classes=len(self.labels_))


def classification_report(scores: np.ndarray, y_true: np.ndarray, n_classes: int) -> TULReport:
    """Five linking measures from raw class scores."""
    if len(scores) == 0:
        raise ValidationError("cannot evaluate an empty test set")
    pred = scores.argmax(axis=1)
    confusion = np.zeros((n_classes, n_classes))
    np.add.at(confusion, (y_true, pred), 1.0)
    macro_p, macro_r = macro_precision_recall(confusion)
    f1 = 0.0 if macro_p + macro_r == 0 else 2 * macro_p * macro_r / (macro_p + macro_r)
    top1 = float((pred == y_true).mean())
    k = min(5, scores.shape[1])
    topk = np.argpartition(-scores, kth=k - 1, axis=1)[:, :k]
    top5 = float(np.mean([y in row for y, row in zip(y_true, topk)]))
    return TULReport(
        macro_precision=macro_p, macro_recall=macro_r, macro_f1=f1,
        top1_accuracy=top1, top5_accuracy=top5,
    )


def macro_precision_recall(confusion: np.ndarray) -> tuple[float, float]:
    """Means of per-class precision and recall; empty denominators count as 0."""
    diag = np.diag(confusion)
    col = confusion.sum(axis=0)
    row = confusion.sum(axis=1)
    precision = np.divide(diag, col, out=np.zeros_like(diag, dtype=float), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros_like(diag, dtype=float), where=row > 0)
    return float(precision.mean()), float(recall.mean())


def tul_train_eval(
    raw: pd.DataFrame,
    tests: dict,
    grid: GridSystem,
    config: TulConfig | None = None,
) -> dict:
    """Train the attacker on raw data, evaluate every dataset's test split.

    The raw dataset is split 3:1:1 by trajectory id; each protected dataset
    gets the same per-user splitting treatment and only its test fifth is
    scored. Returns {dataset name -> TULReport} including "raw".
    """
    config = config or TulConfig()
    raw_users = set(raw["user_id"].unique())
    for name, df in tests.items():
        extra = set(df["user_id"].unique()) - raw_users
        if extra:
            raise LabelMismatchError(f"dataset {name!r} has unknown users: {sorted(extra)[:5]}")
    train_df, val_df, test_df = split_three_one_one(raw, config.seed)
    clf = TulClassifier(
        epochs=config.epochs, lr=config.lr, encoding_dim=config.encoding_dim,
        batch_size=config.batch_size, seed=config.seed,
    )
    clf.fit(train_df, grid, val_df)
    reports = {"raw": clf.evaluate(test_df)}
    for name, df in tests.items():
        _, _, part = split_three_one_one(df, config.seed)
        reports[name] = clf.evaluate(part)
    return reports
