"""Acceptance suite: one summary line per criterion is printed at the end of the run.

Parts that cannot be met are marked xfail(strict=True): they are reported as
FAIL in the summary, and the run turns red if they ever start passing.
"""
import time

import numpy as np
import pytest

import oracles
from acceptance_log import record
from conftest import generate_builtin
from modbus_anomaly import capture, evaluation, features, learn, synth
from modbus_anomaly.features import ANOMALOUS, FeatureMatrix
from modbus_anomaly.learn import kmeans as km
from paper_tables import TABLES
from test_learn import KMEANS_COUNTEREXAMPLE

VOLUMETRIC = {"packets_per_sec", "mean_packets", "max_packets"}
BASIC_SIGNALS = {"tcp.srcport", "tcp.dstport", "udp.srcport", "udp.dstport", "stats.packets_per_proto",
                 "eth.src", "eth.dst", "ip.src", "ip.dst", "ip.proto", "frame.len", "tcp.flags"}


def small_matrix(X, y):
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    return FeatureMatrix(X, np.asarray(y, dtype=np.int8), tuple(f"f{j}" for j in range(X.shape[1])))


# 1. metric oracle suite

def test_criterion_1_metric_oracle():
    start = time.perf_counter()
    worst, tight = 0.0, 0
    for key, (counts, (acc, f1)) in TABLES.items():
        m = evaluation.metrics(evaluation.ConfusionMatrix(*counts))
        err = max(abs(m.accuracy - acc), abs(m.f1 - f1))
        worst = max(worst, err)
        tight += err <= 5e-7
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed < 1.0
    record(1, ok, f"12 published pairs, worst error {worst:.2e}, {tight}/12 within 5e-7, {elapsed:.3f}s")
    assert ok


# 2. naive split

def test_criterion_2_naive_split():
    start = time.perf_counter()
    gen = generate_builtin("ds1")
    rules = learn.load_rules(synth.builtin_path("naive_ds1"))
    assert set(rules.features) == VOLUMETRIC
    matrix = gen.matrix
    result = evaluation.metrics(evaluation.confusion(rules.predict_matrix(matrix), matrix.y))
    elapsed = time.perf_counter() - start
    n_anom = int(np.sum(matrix.y < 0))
    ok = result.accuracy == 1.0 and n_anom == 75 and elapsed < 10
    record(2, ok, f"{len(matrix)} packets, {n_anom} anomalous, accuracy {result.accuracy:.6f}, {elapsed:.1f}s")
    assert ok


# 3. classifier behavior

def test_criterion_3_classifiers():
    start = time.perf_counter()
    ds1 = generate_builtin("ds1").dataset
    outcomes = {}
    for algo in ("svm", "forest", "knn"):
        r = evaluation.run_experiment(ds1, algo, seed=0, with_importance=False)
        outcomes[algo] = r.metrics
    errors = {a: m.confusion.fp + m.confusion.fn for a, m in outcomes.items()}
    ok_ds1 = errors["svm"] == 0 and errors["forest"] == 0 and outcomes["knn"].f1 >= 0.99
    record(3, ok_ds1, f"DS1 test errors svm {errors['svm']}, forest(2000) {errors['forest']}; "
                      f"knn f1 {outcomes['knn'].f1:.6f}")

    kmeans_ok = []
    for seed in (1, 2, 3):
        cap, side = synth.load_scenario("ds2").with_seed(seed).generate()
        records, _ = capture.records_from_capture(cap)
        ds2 = features.dataset_from_records(records, side)
        r = evaluation.run_experiment(ds2, "kmeans", seed=0, with_importance=False)
        c = r.metrics.confusion
        model = r.model
        clusters = model.assign(features.encode(ds2).X)
        normal = np.array(ds2.labels) != ANOMALOUS
        both_normal = all(np.any(normal & (clusters == k)) for k in range(model.k))
        kmeans_ok.append(c.tn == 0 and c.fp == 10 and both_normal)
    elapsed = time.perf_counter() - start
    ok_ds2 = all(kmeans_ok)
    record(3, ok_ds2 and elapsed < 120,
           f"DS2 k-means misses all 10 anomalies with normal rows in both clusters for "
           f"{sum(kmeans_ok)}/3 seeds; {elapsed:.1f}s")
    assert ok_ds1 and ok_ds2 and elapsed < 120


# 4. oracle equivalence

def test_criterion_4_knn_and_tree_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(404)
    knn_match = 0
    for _ in range(100):
        n, width = int(rng.integers(2, 201)), int(rng.integers(1, 5))
        X = rng.integers(0, 4, size=(n, width)).astype(float)
        y = rng.choice([1, -1], size=n)
        k = int(rng.integers(1, min(n, 9) + 1))
        model = learn.train_knn(small_matrix(X, y), k=k, standardize=False)
        Q = rng.integers(0, 4, size=(10, width)).astype(float)
        knn_match += model.predict(Q).tolist() == [oracles.knn_label(X.tolist(), y.tolist(), q, k) for q in Q.tolist()]

    tree_match = 0
    for _ in range(100):
        n, width = int(rng.integers(4, 21)), int(rng.integers(1, 4))
        X = rng.integers(0, 5, size=(n, width)).astype(float)
        y = rng.choice([1, -1], size=n)
        y[0], y[-1] = 1, -1
        model = learn.train_forest(small_matrix(X, y), n_trees=1, bootstrap=False, features_per_split=width)
        tree = oracles.brute_force_tree(X.tolist(), y.tolist())
        Q = np.vstack([X, rng.integers(-1, 6, size=(10, width)).astype(float)])
        tree_match += model.predict(Q).tolist() == [oracles.tree_predict(tree, q) for q in Q.tolist()]
    elapsed = time.perf_counter() - start
    ok = knn_match == 100 and tree_match == 100 and elapsed < 60
    record(4, ok, f"knn {knn_match}/100 exact, single tree {tree_match}/100 identical, {elapsed:.1f}s")
    assert ok


def test_criterion_4_kmeans_random_sets():
    """Misses are reported; each one must be a set where every first row leads to the same local optimum."""
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    hits, unexplained = 0, []
    for t in range(300):
        n = int(rng.integers(2, 13))
        points = rng.normal(size=n) if t % 2 else rng.integers(0, 20, size=n).astype(float)
        model = learn.kmeans_fit(small_matrix(points, [1] * n), seed=t, standardize=False)
        best = oracles.best_two_partition_error(points.tolist())
        if abs(model.final_error - best) <= 1e-9:
            hits += 1
            continue
        X = points[:, None]
        reached = [km.lloyd(X, km.farthest_point_init(X, 2, i), 100)[2] for i in range(n)]
        if min(reached) < model.final_error - 1e-9:
            unexplained.append(t)
    elapsed = time.perf_counter() - start
    record(4, hits == 300, f"k-means {hits}/300 random sets at the exhaustive minimum, "
                           f"every miss unreachable from any start, {elapsed:.1f}s")
    assert not unexplained


@pytest.mark.xfail(strict=True, reason="farthest-point starts cannot reach the optimum on this set")
def test_criterion_4_kmeans_all_inputs():
    X = np.array(KMEANS_COUNTEREXAMPLE)
    model = learn.kmeans_fit(small_matrix(X, [1] * len(X)), standardize=False)
    best = oracles.best_two_partition_error(KMEANS_COUNTEREXAMPLE)
    ok = abs(model.final_error - best) <= 1e-9
    record(4, ok, f"k-means on a 10-point set: E {model.final_error:.6f} vs exhaustive {best:.6f}, "
                  f"same local optimum from all 10 starts")
    assert ok


# 5. invariants

def test_criterion_5_invariants(ds1, ds2):
    checks = {}
    checks["pcap round trip"] = all(capture.read_pcap(capture.write_pcap(g.capture)) == g.capture for g in (ds1, ds2))

    def derived_ok(g):
        d = g.dataset.derived
        per_sec = {}
        for x in d:
            per_sec[x.frame_time_sec] = per_sec.get(x.frame_time_sec, 0) + 1
        return (sum(per_sec.values()) == len(d)
                and all(x.packets_per_sec == per_sec[x.frame_time_sec] for x in d)
                and all(x.min_packets <= x.mean_packets <= x.max_packets for x in d))
    checks["bucket counts and min<=mean<=max"] = all(derived_ok(g) for g in (ds1, ds2))

    km_model = learn.kmeans_fit(ds2.matrix)
    h = km_model.error_history
    X = features.standardize(ds2.matrix).X
    checks["k-means monotone"] = all(b <= a + 1e-9 for a, b in zip(h, h[1:])) and abs(
        km.clustering_error(X, km_model.centroids, km_model.assign(ds2.matrix.X)) - km_model.final_error) < 1e-6

    forest = learn.train_forest(ds1.matrix, n_trees=200, seed=0)
    checks["gini non-negative and per-tree sums"] = all(
        np.all(t.feature_decrease(forest.width) >= 0)
        and abs(t.feature_decrease(forest.width).sum() - t.total_decrease()) < 1e-12 for t in forest.trees)

    m = ds1.matrix
    noise = np.random.default_rng(5).normal(size=len(m))
    noisy = FeatureMatrix(np.column_stack([m.X, noise]), m.y, m.column_names + ("noise",))
    tr, te = features.split(noisy, 0.7, 0)
    imp = evaluation.permutation_importance(learn.train_svm(tr), te, repeats=10, seed=0)
    checks["noise importance within 0.02"] = abs(imp[-1]) <= 0.02

    a = evaluation.run_experiment(ds1.dataset, "forest", seed=1, params={"n_trees": 50})
    b = evaluation.run_experiment(ds1.dataset, "forest", seed=1, params={"n_trees": 50})
    c1, s1 = synth.load_scenario("ds1").generate()
    c2, s2 = synth.load_scenario("ds1").generate()
    checks["determinism"] = (a.report_json() == b.report_json() and a.model_json() == b.model_json()
                             and capture.write_pcap(c1) == capture.write_pcap(c2) and s1 == s2)

    for name, ok in checks.items():
        record(5, ok, name)
    assert all(checks.values()), checks


# 6. importance ranking

def svm_top(dataset, n):
    r = evaluation.run_experiment(dataset, "svm", seed=0)
    return r.importance.ranking()[:n], {f.feature: f.mean_decrease_accuracy for f in r.importance.features}


def test_criterion_6_ds1(ds1):
    top, _ = svm_top(ds1.dataset, 3)
    ok = set(top) == VOLUMETRIC
    record(6, ok, f"DS1 svm top-3 {top}")
    assert ok


@pytest.mark.xfail(strict=True, reason="mean_packets carries no signal for ten anomalies at the capture tail")
def test_criterion_6_ds2(ds2):
    top, imp = svm_top(ds2.dataset, 3)
    ok = set(top) == VOLUMETRIC
    record(6, ok, f"DS2 svm top-3 {top}, mean_packets importance {imp['mean_packets']:.6f}")
    assert ok


def test_criterion_6_ds3(ds3):
    top, _ = svm_top(ds3.dataset, 5)
    basic = [f for f in top if f in BASIC_SIGNALS]
    ok = bool(basic)
    record(6, ok, f"DS3 svm top-5 {top}, basic features present: {basic}")
    assert ok
