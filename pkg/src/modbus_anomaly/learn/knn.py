from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import kernels
from ..features import FeatureMatrix, Standardization
from .base import Model, training_view

DEFAULT_K = 5


@dataclass(eq=False)
class KnnModel(Model):
    """Stores (standardized) training rows; prediction is an exhaustive scan.

    The k nearest rows by Euclidean distance vote. Equal distances at the
    k-th rank favor the lower stored index, and a split vote follows the
    single nearest row.
    """

    stored: np.ndarray
    stored_labels: np.ndarray
    k: int
    column_names: tuple[str, ...]
    standardization: Optional[Standardization] = None

    algorithm = "knn"

    def __post_init__(self):
        if not 1 <= self.k <= len(self.stored):
            raise ValueError(f"k={self.k} must lie in [1, {len(self.stored)}]")

    def _predict(self, X: np.ndarray) -> np.ndarray:
        return kernels.knn_query(self.stored, self.stored_labels, X, self.k)


def train_knn(train: FeatureMatrix, k: int = DEFAULT_K, standardize: bool = True) -> KnnModel:
    X, stats = training_view(train, standardize)
    return KnnModel(X, train.y.astype(np.int8).copy(), int(k), train.column_names, stats)


def knn_predict(model: KnnModel, x) -> str:
    return model.predict_label(x)
