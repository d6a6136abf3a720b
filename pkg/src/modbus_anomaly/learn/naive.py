"""Hand-written or exploratory threshold rules: a row is normal only if every rule agrees."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import yaml

from ..features import ANOMALOUS, NORMAL, FeatureMatrix


class UnknownFeature(KeyError):
    pass


@dataclass(frozen=True)
class ThresholdRule:
    """Normal values of one feature: exact values and/or inclusive ranges."""

    feature: str
    values: frozenset = frozenset()
    ranges: tuple[tuple[float, float], ...] = ()

    def accepts(self, value) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        ok = np.isin(value, np.array(sorted(self.values), dtype=float)) if self.values else np.zeros(value.shape, bool)
        for lo, hi in self.ranges:
            ok |= (value >= lo) & (value <= hi)
        return ok


@dataclass(frozen=True)
class ThresholdRuleSet:
    rules: tuple[ThresholdRule, ...] = field(default_factory=tuple)

    algorithm = "naive"

    @property
    def features(self) -> list[str]:
        return [r.feature for r in self.rules]

    def check_schema(self, column_names: Sequence[str]) -> None:
        missing = [f for f in self.features if f not in column_names]
        if missing:
            raise UnknownFeature(f"rules reference unknown features: {missing}")

    def predict_matrix(self, matrix: FeatureMatrix) -> np.ndarray:
        self.check_schema(matrix.column_names)
        ok = np.ones(len(matrix), dtype=bool)
        for rule in self.rules:
            ok &= rule.accepts(matrix.column(rule.feature))
        return np.where(ok, 1, -1).astype(np.int8)

    def to_dict(self) -> dict:
        out = []
        for r in self.rules:
            entry = {"feature": r.feature}
            if r.values:
                entry["values"] = sorted(r.values)
            if r.ranges:
                entry["ranges"] = [list(x) for x in r.ranges]
            out.append(entry)
        return {"rules": out}


def naive_classify(rules: ThresholdRuleSet, row: Mapping[str, float]) -> str:
    for rule in rules.rules:
        if rule.feature not in row:
            raise UnknownFeature(f"row has no feature {rule.feature!r}")
        if not rule.accepts(row[rule.feature]):
            return ANOMALOUS
    return NORMAL


def fit_threshold_rules(matrix: FeatureMatrix, features: Sequence[str]) -> ThresholdRuleSet:
    """One rule per feature admitting the [min, max] range seen on normal rows."""
    normal = matrix.y > 0
    rules = []
    for name in features:
        if name not in matrix.column_names:
            raise UnknownFeature(name)
        col = matrix.column(name)[normal]
        rules.append(ThresholdRule(name, ranges=((float(col.min()), float(col.max())),)))
    return ThresholdRuleSet(tuple(rules))


def rules_from_dict(doc) -> ThresholdRuleSet:
    entries = (doc or {}).get("rules", []) or []
    rules = []
    for e in entries:
        ranges = tuple((float(lo), float(hi)) for lo, hi in e.get("ranges", []) or [])
        if "range" in e:
            lo, hi = e["range"]
            ranges += ((float(lo), float(hi)),)
        rules.append(ThresholdRule(e["feature"], frozenset(float(v) for v in e.get("values", []) or []), ranges))
    return ThresholdRuleSet(tuple(rules))


def load_rules(path) -> ThresholdRuleSet:
    with open(path, encoding="utf-8") as fh:
        return rules_from_dict(yaml.safe_load(fh))
