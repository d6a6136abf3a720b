"""Backend selection for the hot loops.

The compiled core is used when it imports; set ``MODBUS_ANOMALY_BACKEND=python``
to force the numpy fallback. Both backends give identical results.
"""
from __future__ import annotations

import os
from types import ModuleType

import numpy as np

from . import _pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS: dict[str, ModuleType] = {"python": _pykernels}
if _compiled is not None:
    BACKENDS["cython"] = _compiled


def get_backend(name: str | None = None) -> ModuleType:
    if name is None:
        name = os.environ.get("MODBUS_ANOMALY_BACKEND") or ("cython" if _compiled else "python")
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


_active = get_backend()
BACKEND = _active.NAME


def as_c(X) -> np.ndarray:
    return np.ascontiguousarray(X, dtype=np.float64)


def best_split(X, y, rows, features, backend=None):
    mod = get_backend(backend) if backend else _active
    return mod.best_split(X, y, rows, features)


def forest_votes(X, feature, threshold, left, right, value, roots, backend=None):
    mod = get_backend(backend) if backend else _active
    return mod.forest_votes(as_c(X), feature, threshold, left, right, value, roots)


def knn_query(X, y, Q, k, backend=None):
    mod = get_backend(backend) if backend else _active
    return mod.knn_query(as_c(X), np.ascontiguousarray(y, dtype=np.int8), as_c(Q), int(k))


def sq_distances(Q, X, backend=None):
    mod = get_backend(backend) if backend else _active
    return mod.sq_distances(as_c(Q), as_c(X))


def assign_nearest(X, C, backend=None):
    mod = get_backend(backend) if backend else _active
    return mod.assign_nearest(as_c(X), as_c(C))
