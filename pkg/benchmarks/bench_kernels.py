"""Compare the compiled and pure-Python kernels on DS1-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel runs on identical inputs under both backends; the outputs are
checked for equality before timings are reported.
"""
import argparse
import timeit

import numpy as np

from modbus_anomaly import kernels
from modbus_anomaly.features import FeatureMatrix
from modbus_anomaly.learn import train_forest


def inputs(seed=0, n=3300, width=23):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 12, size=(n, width)).astype(np.float64)
    X[:, :3] = rng.normal(size=(n, 3))
    y = np.where(rng.random(n) < 0.9, 1, -1).astype(np.int8)
    return X, y


def cases():
    X, y = inputs()
    n = len(X)
    rows = np.random.default_rng(1).integers(0, n, size=n)
    feats = np.arange(X.shape[1])
    Q = X[:1000]
    C = X[[0, 1]]
    forest = train_forest(FeatureMatrix(X, y, tuple(f"f{j}" for j in range(X.shape[1]))), n_trees=100, seed=0)
    packed = forest._packed
    return {
        "best_split (3300 rows, 23 features)": lambda b: kernels.best_split(X, (y > 0).astype(np.int8), rows, feats, backend=b),
        "knn_query (1000 x 3300, k=5)": lambda b: kernels.knn_query(X, y, Q, 5, backend=b),
        "forest_votes (100 trees, 3300 rows)": lambda b: kernels.forest_votes(X, *packed, backend=b),
        "assign_nearest (3300 rows, k=2)": lambda b: kernels.assign_nearest(X, C, backend=b),
    }


def same(a, b):
    if isinstance(a, tuple):
        return len(a) == len(b) and all(same(x, z) for x, z in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = sorted(kernels.BACKENDS)
    print(f"backends available: {', '.join(backends)}")
    print(f"{'kernel':40s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, run in cases().items():
        results = {b: run(b) for b in backends}
        if len(backends) > 1:
            assert same(results["cython"], results["python"]), f"backends disagree on {name}"
        best = {b: min(timeit.repeat(lambda: run(b), number=1, repeat=args.repeat)) for b in backends}
        line = f"{name:40s}" + "".join(f"{best[b] * 1e3:10.2f}ms" for b in backends)
        if len(backends) > 1:
            line += f"{best['python'] / best['cython']:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
