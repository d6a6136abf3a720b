"""Random forest of Gini-split decision trees with majority voting."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .. import kernels
from ..features import FeatureMatrix
from .base import Model, require_both_classes

LEAF = -1


def gini(pos: float, n: float) -> float:
    if n == 0:
        return 0.0
    p = pos / n
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


@dataclass(eq=False)
class DecisionTree:
    """Flat node arrays; node 0 is the root. Leaves have ``feature == -1``.

    ``value`` holds the leaf class (+1 normal, -1 anomalous) and 0 for
    internal nodes. ``decrease`` is the node's impurity decrease weighted by
    its share of the tree's training rows.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    impurity: np.ndarray
    decrease: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def apply(self, x) -> int:
        node = 0
        while self.feature[node] != LEAF:
            node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
        return node

    def predict_one(self, x) -> int:
        return int(self.value[self.apply(x)])

    def total_decrease(self) -> float:
        leaves = self.feature == LEAF
        n_root = self.n_samples[0]
        return float(self.impurity[0] - np.sum(self.n_samples[leaves] * self.impurity[leaves]) / n_root)

    def feature_decrease(self, width: int) -> np.ndarray:
        out = np.zeros(width)
        internal = self.feature != LEAF
        np.add.at(out, self.feature[internal], self.decrease[internal])
        return out


def grow_tree(X: np.ndarray, y01: np.ndarray, rows: np.ndarray, features_per_split: int,
              rng: np.random.Generator, backend: Optional[str] = None) -> DecisionTree:
    """Grow one unpruned tree on ``rows`` (which may repeat, as in a bootstrap).

    At each node a uniform feature subset is searched; if none of those
    features can split the node, the remaining features are tried before the
    node becomes a leaf. Majority ties in a leaf go to anomalous.
    """
    width = X.shape[1]
    nodes = {k: [] for k in ("feature", "threshold", "left", "right", "value",
                             "n_samples", "impurity", "decrease")}
    n_root = float(len(rows))

    def new_node(node_rows) -> int:
        pos = float(y01[node_rows].sum())
        n = float(len(node_rows))
        for key, val in (("feature", LEAF), ("threshold", 0.0), ("left", LEAF), ("right", LEAF),
                         ("value", 1 if pos > n - pos else -1), ("n_samples", n),
                         ("impurity", gini(pos, n)), ("decrease", 0.0)):
            nodes[key].append(val)
        return len(nodes["feature"]) - 1

    root = new_node(rows)
    stack = [(root, rows)]
    while stack:
        node, node_rows = stack.pop()
        if nodes["impurity"][node] == 0.0:
            continue
        if features_per_split >= width:
            chosen = np.arange(width)
        else:
            chosen = np.sort(rng.choice(width, features_per_split, replace=False))
        f, thr, _ = kernels.best_split(X, y01, node_rows, chosen, backend=backend)
        if f < 0 and features_per_split < width:
            rest = np.setdiff1d(np.arange(width), chosen)
            f, thr, _ = kernels.best_split(X, y01, node_rows, rest, backend=backend)
        if f < 0:
            continue
        mask = X[node_rows, f] <= thr
        left_rows, right_rows = node_rows[mask], node_rows[~mask]
        left = new_node(left_rows)
        right = new_node(right_rows)
        n = nodes["n_samples"][node]
        child = (nodes["n_samples"][left] * nodes["impurity"][left]
                 + nodes["n_samples"][right] * nodes["impurity"][right]) / n
        nodes["feature"][node] = int(f)
        nodes["threshold"][node] = float(thr)
        nodes["left"][node] = left
        nodes["right"][node] = right
        nodes["value"][node] = 0
        nodes["decrease"][node] = n / n_root * (nodes["impurity"][node] - child)
        # right pushed first so the left subtree is numbered first
        stack.append((right, right_rows))
        stack.append((left, left_rows))

    return DecisionTree(
        feature=np.array(nodes["feature"], dtype=np.int64),
        threshold=np.array(nodes["threshold"], dtype=np.float64),
        left=np.array(nodes["left"], dtype=np.int64),
        right=np.array(nodes["right"], dtype=np.int64),
        value=np.array(nodes["value"], dtype=np.int64),
        n_samples=np.array(nodes["n_samples"], dtype=np.float64),
        impurity=np.array(nodes["impurity"], dtype=np.float64),
        decrease=np.array(nodes["decrease"], dtype=np.float64),
    )


@dataclass(eq=False)
class RandomForestModel(Model):
    trees: list
    features_per_split: int
    seed: int
    column_names: tuple[str, ...]
    bootstrap: bool = True
    standardization: None = field(default=None, init=False)

    algorithm = "forest"

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @cached_property
    def _packed(self):
        offsets = np.cumsum([0] + [t.node_count for t in self.trees[:-1]]).astype(np.int64)
        feature = np.concatenate([t.feature for t in self.trees])
        threshold = np.concatenate([t.threshold for t in self.trees])
        value = np.concatenate([t.value for t in self.trees])
        left = np.concatenate([np.where(t.left >= 0, t.left + o, LEAF) for t, o in zip(self.trees, offsets)])
        right = np.concatenate([np.where(t.right >= 0, t.right + o, LEAF) for t, o in zip(self.trees, offsets)])
        return feature, threshold, left, right, value, offsets

    def normal_votes(self, X) -> np.ndarray:
        return kernels.forest_votes(self.prepare(X), *self._packed)

    def _predict(self, X: np.ndarray) -> np.ndarray:
        normal = kernels.forest_votes(X, *self._packed)
        # a tied vote raises the alarm
        return np.where(normal > self.n_trees - normal, 1, -1).astype(np.int8)

    def gini_importance(self) -> np.ndarray:
        """Mean over trees of each feature's weighted impurity decrease."""
        total = np.zeros(self.width)
        for tree in self.trees:
            total += tree.feature_decrease(self.width)
        return total / self.n_trees


def default_features_per_split(width: int) -> int:
    return max(1, math.isqrt(width))


def train_forest(train: FeatureMatrix, n_trees: int = 2000, seed: int = 0,
                 features_per_split: Optional[int] = None, bootstrap: bool = True,
                 n_jobs: int = 1, backend: Optional[str] = None) -> RandomForestModel:
    """Grow ``n_trees`` trees, each from its own seed spawned off ``seed``."""
    if n_trees < 1:
        raise ValueError("n_trees must be at least 1")
    require_both_classes(train.y)
    X = np.ascontiguousarray(train.X, dtype=np.float64)
    y01 = (train.y > 0).astype(np.int8)
    n, width = X.shape
    mtry = features_per_split or default_features_per_split(width)
    if not 1 <= mtry <= width:
        raise ValueError(f"features_per_split must lie in [1, {width}]")
    seeds = np.random.SeedSequence(seed).spawn(n_trees)

    def one(ss):
        rng = np.random.default_rng(ss)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        return grow_tree(X, y01, rows, mtry, rng, backend)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = list(pool.map(one, seeds))
    else:
        trees = [one(ss) for ss in seeds]
    return RandomForestModel(trees, mtry, seed, train.column_names, bootstrap)


def predict_forest(model: RandomForestModel, x) -> str:
    return model.predict_label(x)


def majority(normal_votes: int, n_trees: int) -> int:
    return 1 if normal_votes > n_trees - normal_votes else -1
