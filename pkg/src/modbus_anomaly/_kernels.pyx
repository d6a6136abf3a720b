# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics match modbus_anomaly._pykernels exactly."""

import numpy as np
from libc.math cimport INFINITY
from libc.stdlib cimport malloc, free, qsort

NAME = "cython"
SORT_CUTOFF = 64

ctypedef struct Pair:
    double v
    int y


cdef int _cmp_pair(const void* a, const void* b) noexcept nogil:
    cdef double va = (<Pair*>a).v
    cdef double vb = (<Pair*>b).v
    if va < vb:
        return -1
    if va > vb:
        return 1
    return 0


def best_split(const double[:, ::1] X, const signed char[::1] y, rows, features):
    cdef Py_ssize_t[::1] r = np.ascontiguousarray(rows, dtype=np.intp)
    cdef Py_ssize_t[::1] feats = np.ascontiguousarray(features, dtype=np.intp)
    cdef Py_ssize_t n = r.shape[0]
    cdef Py_ssize_t i, fi, f
    cdef double nd = <double>n
    cdef double total_pos = 0.0
    cdef double a_l, b_l, n_l, a_r, b_r, n_r, score, lo, hi, thr
    cdef double best_score = INFINITY
    cdef double best_thr = 0.0
    cdef Py_ssize_t best_f = -1
    cdef double f_best
    cdef Py_ssize_t f_pos
    cdef double[::1] vals
    cdef Py_ssize_t[::1] o
    cdef Pair* buf = <Pair*>malloc(n * sizeof(Pair)) if n > 0 else NULL
    if n > 0 and buf == NULL:
        raise MemoryError()
    try:
        for i in range(n):
            total_pos += y[r[i]]
        if n >= SORT_CUTOFF:
            vals_arr = np.empty(n, dtype=np.float64)
            vals = vals_arr
        for fi in range(feats.shape[0]):
            f = feats[fi]
            if n >= SORT_CUTOFF:
                # numpy's sort beats qsort with a callback on large nodes
                for i in range(n):
                    vals[i] = X[r[i], f]
                order = np.argsort(vals_arr)
                o = order
                for i in range(n):
                    buf[i].v = vals[o[i]]
                    buf[i].y = y[r[o[i]]]
            else:
                with nogil:
                    for i in range(n):
                        buf[i].v = X[r[i], f]
                        buf[i].y = y[r[i]]
                    qsort(buf, n, sizeof(Pair), _cmp_pair)
            with nogil:
                a_l = 0.0
                f_best = INFINITY
                f_pos = -1
                for i in range(n - 1):
                    a_l += buf[i].y
                    if buf[i].v < buf[i + 1].v:
                        n_l = <double>(i + 1)
                        b_l = n_l - a_l
                        n_r = nd - n_l
                        a_r = total_pos - a_l
                        b_r = n_r - a_r
                        score = (a_l * b_l) / n_l + (a_r * b_r) / n_r
                        if score < f_best:
                            f_best = score
                            f_pos = i
            if f_pos >= 0 and f_best < best_score:
                lo = buf[f_pos].v
                hi = buf[f_pos + 1].v
                thr = lo + (hi - lo) / 2.0
                if thr >= hi:
                    thr = lo
                best_score = f_best
                best_thr = thr
                best_f = f
    finally:
        free(buf)
    return (int(best_f), float(best_thr), float(best_score))


def forest_votes(const double[:, ::1] X, const long[::1] feature, const double[::1] threshold,
                 const long[::1] left, const long[::1] right, const long[::1] value,
                 const long[::1] roots):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t i, t, node
    votes_arr = np.zeros(n, dtype=np.int64)
    cdef long[::1] votes = votes_arr
    with nogil:
        for i in range(n):
            for t in range(roots.shape[0]):
                node = roots[t]
                while feature[node] >= 0:
                    if X[i, feature[node]] <= threshold[node]:
                        node = left[node]
                    else:
                        node = right[node]
                if value[node] > 0:
                    votes[i] += 1
    return votes_arr


cdef inline double _sqdist(const double[:, ::1] A, Py_ssize_t i,
                           const double[:, ::1] B, Py_ssize_t j) noexcept nogil:
    cdef double acc = 0.0
    cdef double diff
    cdef Py_ssize_t c
    for c in range(A.shape[1]):
        diff = A[i, c] - B[j, c]
        acc += diff * diff
    return acc


def sq_distances(const double[:, ::1] Q, const double[:, ::1] X):
    out_arr = np.empty((Q.shape[0], X.shape[0]))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(Q.shape[0]):
            for j in range(X.shape[0]):
                out[i, j] = _sqdist(Q, i, X, j)
    return out_arr


def knn_query(const double[:, ::1] X, const signed char[::1] y, const double[:, ::1] Q, Py_ssize_t k):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t m = Q.shape[0]
    cdef Py_ssize_t q, j, pos, filled
    cdef double d
    cdef long s
    if k < 1 or k > n:
        raise ValueError("k must lie in [1, number of stored rows]")
    out_arr = np.empty(m, dtype=np.int8)
    cdef signed char[::1] out = out_arr
    cdef double* bd = <double*>malloc(k * sizeof(double))
    cdef Py_ssize_t* bi = <Py_ssize_t*>malloc(k * sizeof(Py_ssize_t))
    if bd == NULL or bi == NULL:
        free(bd)
        free(bi)
        raise MemoryError()
    try:
        with nogil:
            for q in range(m):
                filled = 0
                for j in range(n):
                    d = _sqdist(Q, q, X, j)
                    if filled == k and d >= bd[k - 1]:
                        continue
                    # insertion keeps (distance, index) order; equal distance
                    # never displaces an earlier, lower index
                    pos = filled if filled < k else k - 1
                    while pos > 0 and bd[pos - 1] > d:
                        bd[pos] = bd[pos - 1]
                        bi[pos] = bi[pos - 1]
                        pos -= 1
                    bd[pos] = d
                    bi[pos] = j
                    if filled < k:
                        filled += 1
                s = 0
                for j in range(k):
                    s += y[bi[j]]
                if s > 0:
                    out[q] = 1
                elif s < 0:
                    out[q] = -1
                else:
                    out[q] = y[bi[0]]
    finally:
        free(bd)
        free(bi)
    return out_arr


def assign_nearest(const double[:, ::1] X, const double[:, ::1] C):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t k = C.shape[0]
    cdef Py_ssize_t i, c, arg
    cdef double d, best, total = 0.0
    assign_arr = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] assign = assign_arr
    with nogil:
        for i in range(n):
            arg = 0
            best = _sqdist(X, i, C, 0)
            for c in range(1, k):
                d = _sqdist(X, i, C, c)
                if d < best:
                    best = d
                    arg = c
            assign[i] = arg
            total += best
    return assign_arr, float(total)
