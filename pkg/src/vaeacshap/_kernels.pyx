# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: forest traversal and sorted split scanning."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def forest_predict(const double[:, ::1] X,
                   const int[::1] feature,
                   const double[::1] threshold,
                   const signed char[::1] kind,
                   const int[::1] left,
                   const int[::1] right,
                   const double[::1] value,
                   const int[::1] roots):
    """Mean leaf value over all trees for every row of ``X``."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t n_trees = roots.shape[0]
    cdef Py_ssize_t i, t
    cdef int node, f
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] out_v = out
    if n_trees == 0:
        out[:] = np.nan
        return out
    with nogil:
        # tree-outer order keeps one tree's nodes hot in cache across rows
        for t in range(n_trees):
            for i in range(n):
                node = roots[t]
                f = feature[node]
                while f >= 0:
                    if kind[node] == 0:
                        if X[i, f] <= threshold[node]:
                            node = left[node]
                        else:
                            node = right[node]
                    else:
                        if X[i, f] == threshold[node]:
                            node = left[node]
                        else:
                            node = right[node]
                    f = feature[node]
                out_v[i] += value[node]
        for i in range(n):
            out_v[i] = out_v[i] / n_trees
    return out


def best_split_sorted(const double[::1] xs, const double[::1] ys, Py_ssize_t min_leaf):
    """Best variance-reduction cut of presorted data.

    Returns ``(pos, gain)``: the left child is ``xs[:pos]``. ``pos`` is -1 when
    no admissible cut exists.
    """
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t i, best_pos = -1
    cdef double total = 0.0, left_sum = 0.0, right_sum, gain, best_gain = 0.0
    cdef double base
    if n < 2 * min_leaf or n < 2:
        return -1, 0.0
    for i in range(n):
        total += ys[i]
    base = total * total / n
    with nogil:
        for i in range(n - 1):
            left_sum += ys[i]
            if i + 1 < min_leaf or n - i - 1 < min_leaf:
                continue
            if xs[i] == xs[i + 1]:
                continue
            right_sum = total - left_sum
            gain = (left_sum * left_sum / (i + 1)
                    + right_sum * right_sum / (n - i - 1) - base)
            if gain > best_gain:
                best_gain = gain
                best_pos = i + 1
    return best_pos, best_gain
