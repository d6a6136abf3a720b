"""JSON documents for trained models.

Floats are written with Python's shortest round-trip repr, so a loaded model
predicts bit-identically to the one that was saved.
"""
from __future__ import annotations

import json

import numpy as np

from ..features import Standardization
from .base import schema_hash
from .forest import DecisionTree, RandomForestModel
from .kmeans import KMeansModel
from .knn import KnnModel
from .svm import LinearSvmModel

FORMAT_VERSION = 1
_TREE_FIELDS = ("feature", "threshold", "left", "right", "value", "n_samples", "impurity", "decrease")


class ModelFormatError(ValueError):
    pass


def _std_doc(stats):
    if stats is None:
        return None
    return {"mean": stats.mean.tolist(), "scale": stats.scale.tolist()}


def _std_load(doc):
    if doc is None:
        return None
    return Standardization(np.array(doc["mean"], dtype=float), np.array(doc["scale"], dtype=float))


def to_document(model) -> dict:
    doc = {
        "format": FORMAT_VERSION,
        "algorithm": model.algorithm,
        "columns": list(model.column_names),
        "schema_hash": schema_hash(model.column_names),
    }
    if isinstance(model, LinearSvmModel):
        doc.update(parameters={"c": model.regularization_c, "seed": model.seed, "epochs": model.epochs},
                   standardization=_std_doc(model.standardization),
                   w=model.w.tolist(), b=model.b)
    elif isinstance(model, RandomForestModel):
        doc.update(parameters={"n_trees": model.n_trees, "features_per_split": model.features_per_split,
                               "seed": model.seed, "bootstrap": model.bootstrap},
                   trees=[{f: getattr(t, f).tolist() for f in _TREE_FIELDS} for t in model.trees])
    elif isinstance(model, KnnModel):
        doc.update(parameters={"k": model.k},
                   standardization=_std_doc(model.standardization),
                   stored=model.stored.tolist(), stored_labels=model.stored_labels.tolist())
    elif isinstance(model, KMeansModel):
        doc.update(parameters={"k": model.k, "seed": model.seed},
                   standardization=_std_doc(model.standardization),
                   centroids=model.centroids.tolist(),
                   cluster_label_map={str(c): v for c, v in model.cluster_label_map.items()},
                   cluster_sizes=list(model.cluster_sizes),
                   iterations_run=model.iterations_run, final_error=model.final_error)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return doc


def from_document(doc: dict):
    if doc.get("format") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format {doc.get('format')!r}")
    columns = tuple(doc["columns"])
    if schema_hash(columns) != doc.get("schema_hash"):
        raise ModelFormatError("schema hash does not match the column list")
    algo = doc["algorithm"]
    p = doc.get("parameters", {})
    if algo == "svm":
        return LinearSvmModel(np.array(doc["w"], dtype=float), float(doc["b"]), p["c"], columns,
                              _std_load(doc["standardization"]), p.get("seed", 0), p.get("epochs", 0))
    if algo == "forest":
        trees = [DecisionTree(**{f: np.array(t[f], dtype=np.float64 if f in ("threshold", "n_samples", "impurity", "decrease") else np.int64)
                                 for f in _TREE_FIELDS}) for t in doc["trees"]]
        return RandomForestModel(trees, p["features_per_split"], p["seed"], columns, p.get("bootstrap", True))
    if algo == "knn":
        return KnnModel(np.array(doc["stored"], dtype=float), np.array(doc["stored_labels"], dtype=np.int8),
                        p["k"], columns, _std_load(doc["standardization"]))
    if algo == "kmeans":
        return KMeansModel(np.array(doc["centroids"], dtype=float),
                           {int(c): v for c, v in doc["cluster_label_map"].items()},
                           doc["iterations_run"], doc["final_error"], columns,
                           _std_load(doc["standardization"]), tuple(doc.get("cluster_sizes", ())),
                           seed=p.get("seed", 0))
    raise ModelFormatError(f"unknown algorithm tag {algo!r}")


def dumps(model) -> str:
    return json.dumps(to_document(model), separators=(",", ":"))


def loads(text: str):
    return from_document(json.loads(text))


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(model))


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
