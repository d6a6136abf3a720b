"""Confusion matrices, precision/recall/F1/accuracy, feature importances, experiments.

"normal" is the default positive class: recomputing the published scores
from their count tables only works that way round.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import learn
from .features import (ANOMALOUS, NORMAL, FeatureMatrix, LabeledDataset, encode,
                       split_indices)
from .learn import serialize
from .learn.base import schema_hash

UNDEFINED = None


class LengthMismatch(ValueError):
    pass


class EmptyMatrix(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


def _signs(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype.kind in "US" or arr.dtype == object:
        bad = set(arr.tolist()) - {NORMAL, ANOMALOUS}
        if bad:
            raise ValueError(f"unknown labels {sorted(bad)}")
        return np.where(arr == NORMAL, 1, -1)
    return np.where(arr > 0, 1, -1)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int
    positive_class: str = NORMAL

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def swapped(self) -> "ConfusionMatrix":
        other = ANOMALOUS if self.positive_class == NORMAL else NORMAL
        return ConfusionMatrix(self.tn, self.fn, self.tp, self.fp, other)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion(predictions, labels, positive_class: str = NORMAL) -> ConfusionMatrix:
    """Tally predictions against labels; accepts label strings or +1/-1 signs."""
    pred, true = _signs(predictions), _signs(labels)
    if pred.shape != true.shape:
        raise LengthMismatch(f"{len(pred)} predictions vs {len(true)} labels")
    if positive_class not in (NORMAL, ANOMALOUS):
        raise ValueError(f"positive_class must be {NORMAL!r} or {ANOMALOUS!r}")
    pos = 1 if positive_class == NORMAL else -1
    p_pos, t_pos = pred == pos, true == pos
    return ConfusionMatrix(
        tp=int(np.sum(p_pos & t_pos)),
        fp=int(np.sum(p_pos & ~t_pos)),
        tn=int(np.sum(~p_pos & ~t_pos)),
        fn=int(np.sum(~p_pos & t_pos)),
        positive_class=positive_class,
    )


@dataclass(frozen=True)
class MetricsReport:
    """Scores are ``None`` where the denominator vanishes."""

    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    accuracy: float
    confusion: ConfusionMatrix

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total == 0:
        raise EmptyMatrix("no evaluated rows")
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else UNDEFINED
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else UNDEFINED
    if precision is None or recall is None:
        f1 = UNDEFINED
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricsReport(precision, recall, f1, (cm.tp + cm.tn) / cm.total, cm)


# --------------------------------------------------------------------------
# feature importance


@dataclass(frozen=True)
class FeatureImportance:
    feature: str
    mean_decrease_accuracy: Optional[float] = None
    mean_decrease_gini: Optional[float] = None


@dataclass(frozen=True)
class ImportanceReport:
    features: tuple[FeatureImportance, ...] = ()

    def ranking(self, by: str = "mean_decrease_accuracy") -> list[str]:
        scored = [f for f in self.features if getattr(f, by) is not None]
        return [f.feature for f in sorted(scored, key=lambda f: -getattr(f, by))]

    def as_list(self) -> list[dict]:
        return [{"feature": f.feature, "mean_decrease_accuracy": f.mean_decrease_accuracy,
                 "mean_decrease_gini": f.mean_decrease_gini} for f in self.features]


def _accuracy(pred: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(pred == np.where(y > 0, 1, -1)))


Permuter = Callable[[np.random.Generator, int], np.ndarray]


def permutation_importance(model, test: FeatureMatrix, repeats: int = 10, seed: int = 0,
                           permuter: Optional[Permuter] = None) -> np.ndarray:
    """Baseline accuracy minus mean accuracy with one column shuffled, per column.

    Every (column, repeat) pair draws from its own spawned seed, so results
    do not depend on evaluation order.
    """
    if tuple(model.column_names) != tuple(test.column_names):
        raise SchemaMismatch("model and matrix columns differ")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    X = np.ascontiguousarray(test.X, dtype=np.float64)
    n, width = X.shape
    baseline = _accuracy(model.predict(X), test.y)
    permuter = permuter or (lambda rng, size: rng.permutation(size))
    streams = np.random.SeedSequence(seed).spawn(width * repeats)
    out = np.zeros(width)
    shuffled = X.copy()
    for j in range(width):
        scores = []
        for r in range(repeats):
            perm = permuter(np.random.default_rng(streams[j * repeats + r]), n)
            shuffled[:, j] = X[perm, j]
            scores.append(_accuracy(model.predict(shuffled), test.y))
        shuffled[:, j] = X[:, j]
        out[j] = baseline - float(np.mean(scores)) + 0.0  # no negative zero
    return out


def gini_importance(model) -> np.ndarray:
    return model.gini_importance()


def importance_report(column_names: Sequence[str], accuracy_drop=None, gini=None) -> ImportanceReport:
    return ImportanceReport(tuple(
        FeatureImportance(name,
                          None if accuracy_drop is None else float(accuracy_drop[j]),
                          None if gini is None else float(gini[j]))
        for j, name in enumerate(column_names)))


# --------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentResult:
    report: dict
    metrics: MetricsReport
    importance: ImportanceReport
    model: object
    train_rows: np.ndarray = field(repr=False, default=None)
    test_rows: np.ndarray = field(repr=False, default=None)

    def model_json(self) -> str:
        return serialize.dumps(self.model)

    def report_json(self) -> str:
        return dumps_report(self.report)


def build_report(dataset: str, algorithm: str, seed: int, fraction, stratified,
                 positive_class: str, result: MetricsReport, importance: ImportanceReport,
                 timings: Optional[dict] = None, extra: Optional[dict] = None) -> dict:
    report = {
        "dataset": dataset,
        "algorithm": algorithm,
        "seed": seed,
        "split": {"fraction": fraction, "stratified": stratified},
        "positive_class": positive_class,
        "confusion": result.confusion.as_dict(),
        "metrics": result.as_dict(),
        "importance": importance.as_list(),
        "timings": timings or {},
    }
    if extra:
        report.update(extra)
    return report


def run_experiment(data, algorithm: str, train_fraction: float = 0.7, seed: int = 0,
                   stratified: bool = True, positive_class: str = NORMAL,
                   params: Optional[dict] = None, importance_repeats: int = 10,
                   with_importance: bool = True, record_timings: bool = False,
                   dataset_name: Optional[str] = None) -> ExperimentResult:
    """Train on the train split only and score the held-out split only.

    k-means is unsupervised: it is fitted and scored on every row and the
    split settings are ignored. Timings are left out unless requested so
    that reports stay byte-identical across runs.
    """
    if algorithm not in learn.ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {learn.ALGORITHMS}")
    if isinstance(data, LabeledDataset):
        name = dataset_name or data.source_name
        matrix = encode(data)
    else:
        name = dataset_name or ""
        matrix = data
    params = dict(params or {})
    timings = {}
    clock = time.perf_counter

    if algorithm == "kmeans":
        train_idx = test_idx = np.arange(len(matrix))
        fraction = stratified_out = None
    else:
        train_idx, test_idx = split_indices(matrix.y, train_fraction, seed, stratified)
        fraction, stratified_out = train_fraction, stratified
    train, test = matrix.subset(train_idx), matrix.subset(test_idx)

    t = clock()
    model = learn.train(algorithm, train, seed=seed, **params)
    timings["train_seconds"] = clock() - t

    t = clock()
    pred = model.predict(test.X)
    timings["predict_seconds"] = clock() - t
    result = metrics(confusion(pred, test.y, positive_class))

    acc_drop = gini = None
    if with_importance:
        t = clock()
        acc_drop = permutation_importance(model, test, importance_repeats, seed)
        if algorithm == "forest":
            gini = gini_importance(model)
        timings["importance_seconds"] = clock() - t
    importance = importance_report(matrix.column_names, acc_drop, gini)

    report = build_report(name, algorithm, seed, fraction, stratified_out, positive_class,
                          result, importance, timings if record_timings else None,
                          {"schema_hash": schema_hash(matrix.column_names),
                           "rows": {"train": int(len(train)), "test": int(len(test))}})
    return ExperimentResult(report, result, importance, model, train_idx, test_idx)


# --------------------------------------------------------------------------
# report serialization


def _json(value, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    close = " " * (indent * level)
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise ValueError("non-finite number in report")
        return f"{float(value):.6f}"
    if isinstance(value, str):
        import json
        return json.dumps(value)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{pad}{_json(str(k), indent, level + 1)}: {_json(v, indent, level + 1)}"
                 for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + close + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        return "[\n" + ",\n".join(pad + _json(v, indent, level + 1) for v in value) + "\n" + close + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps_report(report: dict, indent: int = 2) -> str:
    """JSON with every float written to six fractional digits."""
    return _json(report, indent, 0) + "\n"
