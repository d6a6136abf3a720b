from __future__ import annotations

import hashlib
from typing import Optional, Sequence

import numpy as np

from ..features import ANOMALOUS, NORMAL, FeatureMatrix, Standardization, fit_standardization


class SingleClassTrainingSet(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


def schema_hash(column_names: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(column_names).encode()).hexdigest()[:16]


def sign_to_label(v: int) -> str:
    return NORMAL if v > 0 else ANOMALOUS


def require_both_classes(y: np.ndarray) -> None:
    if len(np.unique(y)) < 2:
        raise SingleClassTrainingSet("training set holds a single class")


class Model:
    """Shared predict plumbing. Subclasses implement ``_predict`` on prepared rows.

    ``predict`` takes raw encoded rows; models trained with standardization
    apply their stored training statistics first.
    """

    algorithm = ""
    column_names: tuple[str, ...] = ()
    standardization: Optional[Standardization] = None

    @property
    def width(self) -> int:
        return len(self.column_names)

    def prepare(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.width:
            raise DimensionMismatch(f"expected {self.width} features, got {X.shape[1]}")
        if self.standardization is not None:
            X = self.standardization.apply(X)
        return np.ascontiguousarray(X)

    def predict(self, X) -> np.ndarray:
        """Return +1 (normal) / -1 (anomalous) per row."""
        return self._predict(self.prepare(X))

    def predict_label(self, x) -> str:
        return sign_to_label(int(self.predict(np.asarray(x, dtype=float)[None, :])[0]))

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def training_view(matrix: FeatureMatrix, standardize: bool):
    """Rows to learn on plus the statistics the model must keep."""
    if not standardize:
        return np.ascontiguousarray(matrix.X, dtype=np.float64), None
    stats = fit_standardization(matrix.X)
    return np.ascontiguousarray(stats.apply(matrix.X)), stats
