"""Distribution-level K-anonymity: size-constrained clustering of users plus
element-wise averaging of their mobility matrices.

Users are clustered on their trajectory centroids with a K-means variant whose
assignment step is solved exactly as a transportation linear program, so every
cluster is guaranteed at least ``min_size`` members. All members of a cluster
are then assigned one shared averaged matrix, making their published mobility
distributions mutually indistinguishable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix
from sklearn.base import BaseEstimator

from .core.dataset import matrices_by_user, user_centroids
from .core.grid import GridSystem
from .core.mobility import MobilityMatrix
from .errors import InfeasibleError, ShapeMismatchError, ValidationError
from .rng import substream


class DegenerateInputWarning(RuntimeWarning):
    """All points coincide; the requested split is arbitrary."""


@dataclass(frozen=True)
class UserCluster:
    cluster_id: int
    center: tuple[float, float]
    member_ids: frozenset

    @property
    def size(self) -> int:
        return len(self.member_ids)


@dataclass(frozen=True)
class AnonymizedMatrixSet:
    """user_id -> shared per-cluster averaged matrix, plus the clustering."""

    matrices: dict
    clusters: tuple

    def __getitem__(self, user_id: str) -> MobilityMatrix:
        return self.matrices[user_id]

    def __iter__(self):
        return iter(self.matrices)

    def items(self):
        return self.matrices.items()

    def manifest_rows(self):
        """(user_id, cluster_id, cluster_size) rows, sorted by user id."""
        by_user = {}
        for cluster in self.clusters:
            for uid in cluster.member_ids:
                by_user[uid] = (uid, cluster.cluster_id, cluster.size)
        return [by_user[uid] for uid in sorted(by_user)]


def _farthest_point_seeds(points: np.ndarray, n_clusters: int, seed: int) -> np.ndarray:
    rng = substream(seed, "kmeans-seed")
    first = int(rng.integers(len(points)))
    chosen = [first]
    dist = np.linalg.norm(points - points[first], axis=1)
    for _ in range(n_clusters - 1):
        nxt = int(np.argmax(dist))  # argmax takes the lowest index on ties
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return points[chosen].copy()


def _assign_min_cost(points: np.ndarray, centers: np.ndarray, min_size: int) -> np.ndarray:
    """Exact size-constrained assignment via a transportation LP.

    The constraint matrix is totally unimodular, so the dual-simplex vertex
    solution is integral and the minimum-size constraints hold exactly.
    """
    n, h = len(points), len(centers)
    costs = 0.5 * ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    rows_eq = np.repeat(np.arange(n), h)
    cols = np.arange(n * h)
    a_eq = coo_matrix((np.ones(n * h), (rows_eq, cols)), shape=(n, n * h))
    rows_ub = np.tile(np.arange(h), n)
    a_ub = coo_matrix((-np.ones(n * h), (rows_ub, cols)), shape=(h, n * h))
    res = linprog(
        costs.reshape(-1),
        A_eq=a_eq.tocsr(),
        b_eq=np.ones(n),
        A_ub=a_ub.tocsr(),
        b_ub=-np.full(h, float(min_size)),
        bounds=(0.0, 1.0),
        method="highs-ds",
    )
    if not res.success:
        raise InfeasibleError(f"constrained assignment failed: {res.message}")
    plan = res.x.reshape(n, h)
    return np.argmax(plan, axis=1)


def constrained_kmeans(
    centroids,
    n_clusters: int,
    min_size: int,
    seed: int = 0,
    max_iters: int = 100,
    ids=None,
) -> list[UserCluster]:
    """Cluster points into ``n_clusters`` groups of at least ``min_size`` each.

    Each iteration assigns points to centers by minimum total squared
    Euclidean distance subject to the size constraints, then recenters.
    Stops when the assignment is stable or after ``max_iters``.
    """
    points = np.asarray(centroids, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValidationError(f"centroids must be (n, 2), got {points.shape}")
    n = len(points)
    if n_clusters < 1 or min_size < 1:
        raise ValidationError("n_clusters and min_size must be >= 1")
    if n < n_clusters * min_size:
        raise InfeasibleError(
            f"{n} points cannot fill {n_clusters} clusters of at least {min_size}"
        )
    ids = [str(i) for i in range(n)] if ids is None else list(ids)
    if len(ids) != n:
        raise ValidationError(f"{len(ids)} ids for {n} points")

    if n_clusters > 1 and np.ptp(points, axis=0).max() == 0.0:
        warnings.warn(
            "all centroids identical; splitting into balanced arbitrary clusters",
            DegenerateInputWarning,
        )
        assignment = np.arange(n) % n_clusters
    else:
        centers = _farthest_point_seeds(points, n_clusters, seed)
        assignment = None
        for _ in range(max_iters):
            new_assignment = _assign_min_cost(points, centers, min_size)
            if assignment is not None and np.array_equal(new_assignment, assignment):
                break
            assignment = new_assignment
            for c in range(n_clusters):
                members = points[assignment == c]
                if len(members):
                    centers[c] = members.mean(axis=0)

    clusters = []
    for c in range(n_clusters):
        member_idx = np.nonzero(assignment == c)[0]
        center = points[member_idx].mean(axis=0)
        clusters.append(
            UserCluster(
                cluster_id=c,
                center=(float(center[0]), float(center[1])),
                member_ids=frozenset(ids[i] for i in member_idx),
            )
        )
    return clusters


def average_matrices(cluster: UserCluster, matrices: dict) -> MobilityMatrix:
    """Element-wise mean of the members' matrices.

    Hours observed by only part of the cluster are renormalized to the mean
    over the members that observed them, keeping every slice a distribution;
    hours observed by nobody stay all-zero.
    """
    members = sorted(cluster.member_ids)
    stack = []
    for uid in members:
        m = matrices[uid]
        if stack and m.data.shape != stack[0].shape:
            raise ShapeMismatchError(
                f"matrix for {uid!r} has shape {m.data.shape}, expected {stack[0].shape}"
            )
        stack.append(m.data)
    mean = np.mean(stack, axis=0)
    sums = mean.sum(axis=(1, 2), keepdims=True)
    partial = (np.abs(sums - 1.0) > 1e-12) & (sums > 0)
    mean = np.where(partial, mean / np.where(sums == 0, 1.0, sums), mean)
    return MobilityMatrix(user_id=f"cluster-{cluster.cluster_id}", data=mean)


def kama_pipeline(dataset, grid: GridSystem, k: int = 5, n_clusters: int | None = None,
                  seed: int = 0, max_iters: int = 100) -> AnonymizedMatrixSet:
    """Centroids -> size-constrained clustering -> per-cluster matrix averaging.

    ``n_clusters`` defaults to floor(users / (2k)) so clusters average about
    2k members. Every user in a cluster maps to the identical averaged matrix.
    """
    centroids = user_centroids(dataset)
    users = sorted(centroids)
    if n_clusters is None:
        n_clusters = max(1, len(users) // (2 * k))
    if len(users) < n_clusters * k:
        raise InfeasibleError(
            f"{len(users)} users cannot fill {n_clusters} clusters of at least {k}"
        )
    points = np.array([centroids[u] for u in users])
    clusters = constrained_kmeans(points, n_clusters, k, seed=seed, max_iters=max_iters, ids=users)
    per_user = matrices_by_user(dataset, grid)
    assigned: dict[str, MobilityMatrix] = {}
    for cluster in clusters:
        averaged = average_matrices(cluster, per_user)
        for uid in cluster.member_ids:
            assigned[uid] = averaged
    return AnonymizedMatrixSet(matrices=assigned, clusters=tuple(clusters))


class KAnonymizer(BaseEstimator):
    """Estimator wrapper: fit learns the clustering, transform averages matrices.

    Parameters
    ----------
    k : minimum cluster size (the anonymity parameter).
    n_clusters : cluster count; None selects floor(users / (2k)).
    seed : RNG seed for cluster seeding.
    max_iters : cap on assignment/update rounds.
    """

    def __init__(self, k: int = 5, n_clusters: int | None = None, seed: int = 0, max_iters: int = 100):
        self.k = k
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iters = max_iters

    def fit(self, dataset, grid: GridSystem):
        result = kama_pipeline(
            dataset, grid, k=self.k, n_clusters=self.n_clusters,
            seed=self.seed, max_iters=self.max_iters,
        )
        self.clusters_ = result.clusters
        self.matrices_ = result.matrices
        self.result_ = result
        return self

    def transform(self, user_ids=None) -> dict:
        if user_ids is None:
            return dict(self.matrices_)
        return {uid: self.matrices_[uid] for uid in user_ids}

    def fit_transform(self, dataset, grid: GridSystem) -> dict:
        return self.fit(dataset, grid).transform()
