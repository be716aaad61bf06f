"""Compiled versus numpy kernels: forest prediction and split search.

Run ``python3 benchmarks/bench_kernels.py [--rows N] [--trees T]``. Prints
median wall times over repeats and the speedup; both backends must agree to
1e-12 or the script exits non-zero.
"""

import argparse
import statistics
import sys
import time

import numpy as np

from vaeacshap import kernels, predictors, vaeac
from vaeacshap import _kernels_py


def _time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--trees", type=int, default=100)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "cython":
        print("compiled extension unavailable; build with `pip install -e . --no-build-isolation`")
        return 1

    rng = np.random.default_rng(0)
    M = 5
    X = rng.standard_normal((1000, M))
    y = X[:, 0] * X[:, 1] + np.sin(X[:, 2]) + 0.1 * rng.standard_normal(1000)
    forest = predictors.fit_forest(X, y, vaeac.FeatureSchema.continuous(M), n_trees=args.trees,
                                   rng=np.random.default_rng(1))
    Xq = rng.standard_normal((args.rows, M))
    parts = (forest.feature, forest.threshold, forest.kind, forest.left, forest.right,
             forest.value, forest.roots)

    failed = False
    print(f"{'kernel':<20}{'cython s':>12}{'numpy s':>12}{'speedup':>10}")
    t_c, p_c = _time(lambda: kernels.forest_predict(Xq, *parts), args.repeats)
    t_p, p_p = _time(lambda: _kernels_py.forest_predict(Xq, *parts), args.repeats)
    failed |= not np.allclose(p_c, p_p, rtol=0, atol=1e-12)
    print(f"{'forest_predict':<20}{t_c:>12.4f}{t_p:>12.4f}{t_p / t_c:>10.1f}")

    xs = np.sort(rng.standard_normal(5000))
    ys = np.sin(xs) + 0.1 * rng.standard_normal(xs.size)

    def many(fn):
        return lambda: [fn(xs, ys, 5) for _ in range(200)]

    t_c, s_c = _time(many(kernels.best_split_sorted), args.repeats)
    t_p, s_p = _time(many(_kernels_py.best_split_sorted), args.repeats)
    failed |= s_c[0][0] != s_p[0][0] or abs(s_c[0][1] - s_p[0][1]) > 1e-9 * max(1.0, abs(s_p[0][1]))
    print(f"{'best_split_sorted':<20}{t_c:>12.4f}{t_p:>12.4f}{t_p / t_c:>10.1f}")
    if failed:
        print("backends disagree", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
