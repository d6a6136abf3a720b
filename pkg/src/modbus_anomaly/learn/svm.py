"""Linear soft-margin SVM trained by seeded mini-batch subgradient descent.

The solver minimizes ``lambda/2 |w|^2 + mean(hinge)`` with ``lambda = 1/(C n)``
using Pegasos steps ``1/(lambda t)`` and a projection onto the ball of radius
``1/sqrt(lambda)``. The offset is learned as the weight of a constant input,
and the returned model averages the iterates of the final half of training.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..features import FeatureMatrix, Standardization
from .base import Model, require_both_classes, training_view


@dataclass(eq=False)
class LinearSvmModel(Model):
    w: np.ndarray
    b: float
    regularization_c: float
    column_names: tuple[str, ...]
    standardization: Optional[Standardization] = None
    seed: int = 0
    epochs: int = 0

    algorithm = "svm"

    def decision(self, X) -> np.ndarray:
        """``w.x - b`` per row; positive means normal."""
        return self.prepare(X) @ self.w - self.b

    def _predict(self, X: np.ndarray) -> np.ndarray:
        # sgn(0) resolves to normal
        return np.where(X @ self.w - self.b >= 0, 1, -1).astype(np.int8)


def train_svm(train: FeatureMatrix, c: float = 1.0, seed: int = 0, epochs: int = 60,
              batch_size: int = 16, standardize: bool = True) -> LinearSvmModel:
    if c <= 0:
        raise ValueError("regularization C must be positive")
    require_both_classes(train.y)
    X, stats = training_view(train, standardize)
    y = train.y.astype(np.float64)
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    lam = 1.0 / (c * n)
    radius = 1.0 / np.sqrt(lam)
    rng = np.random.default_rng(seed)

    wa = np.zeros(d + 1)
    avg = np.zeros(d + 1)
    steps_per_epoch = -(-n // batch_size)
    total = epochs * steps_per_epoch
    avg_from = total // 2
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            t += 1
            batch = order[start:start + batch_size]
            eta = 1.0 / (lam * t)
            margins = y[batch] * (Xa[batch] @ wa)
            viol = batch[margins < 1.0]
            wa *= 1.0 - eta * lam
            if len(viol):
                wa += (eta / len(batch)) * (y[viol] @ Xa[viol])
            norm = np.linalg.norm(wa)
            if norm > radius:
                wa *= radius / norm
            if t > avg_from:
                avg += wa
    avg /= total - avg_from
    # decision = w.x + wa[-1] = w.x - b
    return LinearSvmModel(avg[:-1].copy(), float(-avg[-1]), c, train.column_names,
                          stats, seed, epochs)


def predict_svm(model: LinearSvmModel, x) -> str:
    return model.predict_label(x)
