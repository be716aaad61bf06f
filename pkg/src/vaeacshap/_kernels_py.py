"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def forest_predict(X, feature, threshold, kind, left, right, value, roots):
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if len(roots) == 0:
        return np.full(n, np.nan)
    rows = np.arange(n)
    acc = np.zeros(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        f = feature[node]
        active = f >= 0
        while active.any():
            idx = rows[active]
            nd = node[idx]
            xv = X[idx, feature[nd]]
            thr = threshold[nd]
            go_left = np.where(kind[nd] == 0, xv <= thr, xv == thr)
            node[idx] = np.where(go_left, left[nd], right[nd])
            active[idx] = feature[node[idx]] >= 0
        acc += value[node]
    return acc / len(roots)


def best_split_sorted(xs, ys, min_leaf):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n = xs.shape[0]
    if n < 2 * min_leaf or n < 2:
        return -1, 0.0
    csum = np.cumsum(ys)[:-1]
    total = csum[-1] + ys[-1] if n > 1 else ys[0]
    n_left = np.arange(1, n)
    n_right = n - n_left
    gain = csum**2 / n_left + (total - csum) ** 2 / n_right - total**2 / n
    ok = (n_left >= min_leaf) & (n_right >= min_leaf) & (xs[:-1] != xs[1:])
    gain = np.where(ok, gain, -np.inf)
    i = int(np.argmax(gain))
    # first maximum, strictly positive, mirrors the compiled scan
    if not np.isfinite(gain[i]) or gain[i] <= 0.0:
        return -1, 0.0
    return i + 1, float(gain[i])
