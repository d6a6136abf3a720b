"""Pure numpy versions of the hot loops; the compiled core mirrors these.

Arithmetic is ordered so both backends produce bit-identical results: split
scores use ``a_l*b_l/n_l + a_r*b_r/n_r`` on float64 counts, and squared
distances accumulate feature by feature in column order.
"""
from __future__ import annotations

import numpy as np

NAME = "python"


def best_split(X, y, rows, features):
    """Best Gini split over ``features`` for the node holding ``rows``.

    ``y`` holds 1 for normal and 0 for anomalous. Returns
    ``(feature, threshold, score)`` where score is
    ``sum_children(normal*anomalous/size)``; lower is purer. Ties keep the
    earliest feature, then the lowest threshold. ``feature`` is -1 when no
    feature has two distinct values.
    """
    rows = np.asarray(rows, dtype=np.intp)
    labels = y[rows].astype(np.float64)
    n = float(len(rows))
    total_pos = labels.sum()
    best = (-1, 0.0, np.inf)
    for f in features:
        vals = X[rows, f]
        order = np.argsort(vals, kind="stable")
        v = vals[order]
        cand = np.flatnonzero(v[:-1] < v[1:])
        if len(cand) == 0:
            continue
        pos = np.cumsum(labels[order])
        n_l = (cand + 1).astype(np.float64)
        a_l = pos[cand]
        b_l = n_l - a_l
        n_r = n - n_l
        a_r = total_pos - a_l
        b_r = n_r - a_r
        score = (a_l * b_l) / n_l + (a_r * b_r) / n_r
        i = int(np.argmin(score))
        if score[i] < best[2]:
            lo, hi = v[cand[i]], v[cand[i] + 1]
            thr = lo + (hi - lo) / 2.0
            if thr >= hi:
                thr = lo
            best = (int(f), float(thr), float(score[i]))
    return best


def forest_votes(X, feature, threshold, left, right, value, roots):
    """Count normal votes per row over all trees packed into flat node arrays.

    Leaves have ``feature == -1`` and ``value`` in {+1, -1}.
    """
    n = X.shape[0]
    votes = np.zeros(n, dtype=np.int64)
    idx = np.arange(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        active = feature[node] >= 0
        while active.any():
            cur = node[active]
            go_left = X[idx[active], feature[cur]] <= threshold[cur]
            node[active] = np.where(go_left, left[cur], right[cur])
            active = feature[node] >= 0
        votes += value[node] > 0
    return votes


def sq_distances(Q, X):
    """Squared Euclidean distances, shape (len(Q), len(X)), column-sequential sums."""
    acc = np.zeros((Q.shape[0], X.shape[0]))
    for j in range(X.shape[1]):
        diff = Q[:, j, None] - X[None, :, j]
        acc += diff * diff
    return acc


def knn_query(X, y, Q, k, chunk=256):
    """Majority label of the k nearest stored rows for each query.

    Distance ties at rank k go to the lower stored index; a label tie goes to
    the label of the single nearest row. Labels are +1/-1.
    """
    out = np.empty(Q.shape[0], dtype=np.int8)
    for start in range(0, Q.shape[0], chunk):
        d = sq_distances(Q[start:start + chunk], X)
        nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
        lab = y[nearest].astype(np.int64)
        s = lab.sum(axis=1)
        out[start:start + chunk] = np.where(s > 0, 1, np.where(s < 0, -1, lab[:, 0]))
    return out


def assign_nearest(X, C):
    """Index of the nearest centroid per row (ties to the lower index) and the error."""
    d = sq_distances(X, C)
    assign = np.argmin(d, axis=1)
    best = d[np.arange(len(X)), assign]
    # running sum matches the compiled loop's summation order
    return assign.astype(np.intp), float(np.cumsum(best)[-1]) if len(best) else 0.0
