"""Lloyd's k-means with farthest-point seeding and seeded restarts.

Clusters are named without looking at labels: the most populated cluster is
"normal", every other cluster "anomalous".
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import kernels
from ..features import FeatureMatrix, Standardization, TooFewRows
from .base import Model, training_view


@dataclass(eq=False)
class KMeansModel(Model):
    centroids: np.ndarray
    cluster_label_map: dict
    iterations_run: int
    final_error: float
    column_names: tuple[str, ...]
    standardization: Optional[Standardization] = None
    cluster_sizes: tuple[int, ...] = ()
    error_history: tuple[float, ...] = field(default=(), repr=False)
    seed: int = 0

    algorithm = "kmeans"

    @property
    def k(self) -> int:
        return len(self.centroids)

    def assign(self, X) -> np.ndarray:
        return kernels.assign_nearest(self.prepare(X), self.centroids)[0]

    def _predict(self, X: np.ndarray) -> np.ndarray:
        clusters, _ = kernels.assign_nearest(X, self.centroids)
        signs = np.array([self.cluster_label_map[c] for c in range(self.k)], dtype=np.int8)
        return signs[clusters]


def farthest_point_init(X: np.ndarray, k: int, first: int) -> np.ndarray:
    """Start at row ``first``; each next centroid is the row farthest from those chosen."""
    chosen = [first]
    d = kernels.sq_distances(X, X[[first]])[:, 0]
    for _ in range(1, k):
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, kernels.sq_distances(X, X[[nxt]])[:, 0])
    return X[chosen].copy()


def _means(X: np.ndarray, assign: np.ndarray, previous: np.ndarray) -> np.ndarray:
    k = len(previous)
    sums = np.zeros_like(previous)
    np.add.at(sums, assign, X)
    counts = np.bincount(assign, minlength=k)
    updated = previous.copy()
    live = counts > 0
    updated[live] = sums[live] / counts[live, None]
    return updated


def _transfer_costs(X, centroids, assign, counts):
    """Hartigan's criterion per row: cost of leaving its cluster vs. best cost of joining another."""
    d = np.stack([np.sum((X - c) ** 2, axis=1) for c in centroids], axis=1)
    own = counts[assign]
    with np.errstate(divide="ignore", invalid="ignore"):
        leave = np.where(own > 1, own / (own - 1.0) * d[np.arange(len(X)), assign], 0.0)
    join = counts / (counts + 1.0) * d
    join[np.arange(len(X)), assign] = np.inf
    return leave, join


def hartigan_transfers(X: np.ndarray, centroids: np.ndarray, assign: np.ndarray):
    """Move single rows to another cluster while that strictly lowers the error.

    Rows are visited in index order; returns (centroids, assignment, moves).
    """
    assign = assign.copy()
    k = len(centroids)
    counts = np.bincount(assign, minlength=k).astype(float)
    centroids = _means(X, assign, centroids)
    moves = 0
    leave, join = _transfer_costs(X, centroids, assign, counts)
    for i in np.flatnonzero(join.min(axis=1) < leave):
        a = assign[i]
        if counts[a] <= 1:
            continue
        x = X[i]
        d = np.sum((centroids - x) ** 2, axis=1)
        cost_leave = counts[a] / (counts[a] - 1.0) * d[a]
        cost_join = counts / (counts + 1.0) * d
        cost_join[a] = np.inf
        b = int(np.argmin(cost_join))
        if cost_join[b] < cost_leave:
            centroids[a] = (counts[a] * centroids[a] - x) / (counts[a] - 1.0)
            centroids[b] = (counts[b] * centroids[b] + x) / (counts[b] + 1.0)
            counts[a] -= 1
            counts[b] += 1
            assign[i] = b
            moves += 1
    if moves:
        centroids = _means(X, assign, centroids)
    return centroids, assign, moves


def lloyd(X: np.ndarray, centroids: np.ndarray, max_iterations: int, refine: bool = True):
    """Alternate assignment and mean updates until assignments stop changing.

    At each fixpoint, single-row Hartigan transfers are tried; if any row
    moves, the Lloyd iterations resume from the improved partition. Returns
    (centroids, assignment, error, iterations, error history). An emptied
    cluster keeps its previous centroid.
    """
    assign, error = kernels.assign_nearest(X, centroids)
    history = [error]
    iterations = 0
    while iterations < max_iterations:
        iterations += 1
        updated = _means(X, assign, centroids)
        new_assign, error = kernels.assign_nearest(X, updated)
        history.append(error)
        centroids = updated
        if not np.array_equal(new_assign, assign):
            assign = new_assign
            continue
        if not refine:
            break
        centroids, moved_assign, moves = hartigan_transfers(X, centroids, assign)
        if not moves:
            break
        assign = moved_assign
    return centroids, assign, error, iterations, history


def kmeans_fit(matrix: FeatureMatrix, k: int = 2, seed: int = 0, max_iterations: int = 100,
               restarts: int = 10, standardize: bool = True) -> KMeansModel:
    """Best-of-``restarts`` runs by final squared error, each from a different first row."""
    if len(matrix) < k:
        raise TooFewRows(f"k-means with k={k} needs at least {k} rows")
    X, stats = training_view(matrix, standardize)
    rng = np.random.default_rng(seed)
    # distinct starting rows; with fewer rows than restarts each row is tried once
    firsts = rng.permutation(len(X))[:restarts]
    best = None
    for first in firsts:
        run = lloyd(X, farthest_point_init(X, k, int(first)), max_iterations)
        if best is None or run[2] < best[2]:
            best = run
    centroids, assign, error, iterations, history = best
    sizes = np.bincount(assign, minlength=k)
    # np.argmax picks the lowest index among equally large clusters
    normal = int(np.argmax(sizes))
    label_map = {c: (1 if c == normal else -1) for c in range(k)}
    return KMeansModel(centroids, label_map, iterations, float(error), matrix.column_names,
                       stats, tuple(int(s) for s in sizes), tuple(history), seed)


def kmeans_predict(model: KMeansModel, x) -> str:
    return model.predict_label(x)


def clustering_error(X: np.ndarray, centroids: np.ndarray, assign: np.ndarray) -> float:
    diff = X - centroids[assign]
    return float(np.sum(diff * diff))
