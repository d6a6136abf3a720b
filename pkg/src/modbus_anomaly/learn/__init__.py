"""The four classifiers plus naive threshold rules, behind one train/predict contract."""
from __future__ import annotations

from ..features import FeatureMatrix
from .base import DimensionMismatch, Model, SingleClassTrainingSet, schema_hash
from .forest import RandomForestModel, predict_forest, train_forest
from .kmeans import KMeansModel, kmeans_fit, kmeans_predict
from .knn import DEFAULT_K, KnnModel, knn_predict, train_knn
from .naive import (ThresholdRule, ThresholdRuleSet, UnknownFeature, fit_threshold_rules,
                    load_rules, naive_classify)
from .svm import LinearSvmModel, predict_svm, train_svm

ALGORITHMS = ("svm", "forest", "knn", "kmeans")
SUPERVISED = ("svm", "forest", "knn")


def train(algorithm: str, matrix: FeatureMatrix, seed: int = 0, **params) -> Model:
    """Dispatch on the algorithm tag; ``params`` go to the specific trainer."""
    if algorithm == "svm":
        return train_svm(matrix, seed=seed, **params)
    if algorithm == "forest":
        return train_forest(matrix, seed=seed, **params)
    if algorithm == "knn":
        return train_knn(matrix, **params)
    if algorithm == "kmeans":
        return kmeans_fit(matrix, seed=seed, **params)
    raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")


__all__ = [
    "ALGORITHMS", "SUPERVISED", "DEFAULT_K", "DimensionMismatch", "KMeansModel", "KnnModel",
    "LinearSvmModel", "Model", "RandomForestModel", "SingleClassTrainingSet", "ThresholdRule",
    "ThresholdRuleSet", "UnknownFeature", "fit_threshold_rules", "kmeans_fit", "kmeans_predict",
    "knn_predict", "load_rules", "naive_classify", "predict_forest", "predict_svm", "schema_hash",
    "train", "train_forest", "train_knn", "train_svm",
]
