import io
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from modbus_anomaly import features as F
from modbus_anomaly.capture import PacketRecord

T0 = 1_546_300_800_000_000


def basic(time_us, number=1, ip_dst="10.0.0.2", proto=6, eth_src="02:00:00:00:00:01"):
    return F.BasicFeatures(number, time_us, eth_src, "02:00:00:00:00:02", "10.0.0.1", ip_dst, proto,
                           60, 0x18, 40001, 502, None, None, False)


def rows_at(seconds):
    return [basic(T0 + int(s * 1_000_000), i + 1) for i, s in enumerate(seconds)]


# basic features

def test_extract_basic_empty():
    assert F.extract_basic([]) == []


def test_extract_basic_tcp_row():
    rec = PacketRecord(1, T0, 66, "a", "b", "10.0.0.1", "10.0.0.2", 6, 40001, 502, 0x18, 5, 12)
    (row,) = F.extract_basic([rec])
    assert row.tcp_dstport == 502 and row.udp_srcport is None and row.udp_dstport is None


def test_basic_field_set_is_table_sized():
    from dataclasses import fields
    assert len(fields(F.BasicFeatures)) == 14 == len(F.BASIC_COLUMNS)
    assert len(fields(F.DerivedFeatures)) == 9 == len(F.DERIVED_COLUMNS)


def test_frame_numbers_dense(ds1):
    assert [b.frame_number for b in ds1.dataset.basic[:10]] == list(range(1, 11))
    assert [b.frame_number for b in ds1.dataset.basic] == list(range(1, len(ds1.dataset) + 1))


# derived features

def test_derive_empty():
    with pytest.raises(F.EmptyInput):
        F.derive([])


def test_three_packets_in_one_second():
    for d in F.derive(rows_at([0, 0.2, 0.9])):
        assert (d.packets_per_sec, d.max_packets, d.min_packets, d.mean_packets) == (3, 3, 3, 3.0)


def test_seconds_zero_zero_one():
    d = F.derive(rows_at([0, 0.5, 1.1]))
    assert [x.packets_per_sec for x in d] == [2, 2, 1]
    assert (d[-1].max_packets, d[-1].min_packets, d[-1].mean_packets) == (2, 1, 1.5)
    assert (d[0].max_packets, d[0].min_packets, d[0].mean_packets) == (2, 2, 2.0)


def test_empty_seconds_count_as_zero():
    d = F.derive(rows_at([0, 2.5]))
    # counts per second are 1, 0, 1
    assert (d[-1].min_packets, d[-1].mean_packets) == (0, 2 / 3)


def test_minute_buckets_and_whole_capture_counts():
    rows = rows_at([0, 59.9, 60, 61]) + [basic(T0 + 62_000_000, 5, ip_dst="10.0.0.3", proto=17)]
    d = F.derive(rows)
    assert [x.frame_time_min for x in d] == [0, 0, 1, 1, 1]
    assert [x.packets_per_minute for x in d] == [2, 2, 3, 3, 3]
    assert [x.packets_per_ip_dst for x in d] == [4, 4, 4, 4, 1]
    assert [x.stats_packets_per_proto for x in d] == [4, 4, 4, 4, 1]


times = st.lists(st.integers(0, 30_000_000), min_size=1, max_size=60).map(sorted)


@given(times)
def test_bucket_consistency_and_ordering(offsets):
    rows = [basic(T0 + t, i + 1) for i, t in enumerate(offsets)]
    d = F.derive(rows)
    by_sec = Counter(x.frame_time_sec for x in d)
    assert sum(by_sec.values()) == len(rows)
    for x in d:
        assert x.packets_per_sec == by_sec[x.frame_time_sec]
        assert x.min_packets <= x.mean_packets <= x.max_packets
    by_min = Counter(x.frame_time_min for x in d)
    assert all(x.packets_per_minute == by_min[x.frame_time_min] for x in d)


@given(times, st.randoms(use_true_random=False))
def test_permuting_within_a_second_keeps_derived_values(offsets, rnd):
    rows = [basic(T0 + t, i + 1, ip_dst=f"10.0.0.{t % 3}") for i, t in enumerate(offsets)]
    shuffled = list(rows)
    # shuffle inside each second bucket only
    groups = {}
    for i, r in enumerate(rows):
        groups.setdefault((r.frame_time - rows[0].frame_time) // 1_000_000, []).append(i)
    for idx in groups.values():
        picked = [rows[i] for i in idx]
        rnd.shuffle(picked)
        for i, r in zip(idx, picked):
            shuffled[i] = r
    before = dict(zip((r.frame_number for r in rows), F.derive(rows)))
    after = dict(zip((r.frame_number for r in shuffled), F.derive(shuffled)))
    assert before == after


def test_scan_burst_raises_max_packets(ds1):
    steady = max(d.max_packets for d, lab in zip(ds1.dataset.derived, ds1.dataset.labels) if lab == F.NORMAL)
    burst = min(d.max_packets for d, lab in zip(ds1.dataset.derived, ds1.dataset.labels) if lab == F.ANOMALOUS)
    assert burst > 3 * steady


def test_generated_captures_keep_min_mean_max(ds1, ds2):
    for gen in (ds1, ds2):
        d = gen.dataset.derived
        assert all(x.min_packets <= x.mean_packets <= x.max_packets for x in d)
        assert sum(Counter(x.frame_time_sec for x in d).values()) == len(d)


# labels

def test_sidecar_default_normal():
    side = F.parse_sidecar("#default_normal\nframe.number,label\n" + "".join(f"{i},anomalous\n" for i in range(5, 10)))
    rows = rows_at([i / 100 for i in range(100)])
    ds = F.attach_labels(rows, F.derive(rows), side)
    assert ds.coverage() == {F.NORMAL: 95, F.ANOMALOUS: 5}


def test_sidecar_unknown_frame():
    rows = rows_at([i / 100 for i in range(100)])
    with pytest.raises(F.UnknownFrameNumber):
        F.attach_labels(rows, F.derive(rows), F.LabelSidecar({101: F.ANOMALOUS}, True))


def test_sidecar_duplicate_and_missing():
    with pytest.raises(F.DuplicateLabel):
        F.parse_sidecar("frame.number,label\n1,normal\n1,anomalous\n")
    rows = rows_at([0, 0.1])
    with pytest.raises(F.MissingLabel):
        F.attach_labels(rows, F.derive(rows), F.LabelSidecar({1: F.NORMAL}))


def test_sidecar_csv_round_trip():
    side = F.LabelSidecar({3: F.ANOMALOUS, 1: F.NORMAL}, True)
    assert F.parse_sidecar(side.to_csv()) == side


def test_ds1_shape(ds1):
    assert ds1.dataset.coverage()[F.ANOMALOUS] == 75
    assert abs(len(ds1.dataset) - 3319) < 100


def test_feature_csv_round_trip(ds1):
    text = F.dataset_to_csv(ds1.dataset)
    header = text.splitlines()[0].split(",")
    assert header == list(F.FEATURE_COLUMNS) + ["label"]
    back = F.read_feature_csv(io.StringIO(text))
    assert back.basic == ds1.dataset.basic and back.derived == ds1.dataset.derived
    assert back.labels == ds1.dataset.labels


# encoding

def test_first_appearance_codes():
    rows = [basic(T0, 1, eth_src="b"), basic(T0 + 1, 2, eth_src="a"), basic(T0 + 2, 3, eth_src="b")]
    ds = F.attach_labels(rows, F.derive(rows), F.LabelSidecar({}, True))
    m = F.encode(ds)
    assert m.column("eth.src").tolist() == [0, 1, 0]
    assert m.width == 23
    assert m.column("udp.srcport").tolist() == [F.MISSING] * 3


def test_encoding_round_trip(ds1):
    m = ds1.matrix
    for col, attr in zip(F.CATEGORICAL_COLUMNS, ("eth_src", "eth_dst", "ip_src", "ip_dst")):
        decoded = [m.encoding.decode(col, int(c)) for c in m.column(col)]
        assert decoded == [getattr(b, attr) for b in ds1.dataset.basic]


def test_labels_are_signed():
    rows = rows_at([0, 0.1])
    ds = F.attach_labels(rows, F.derive(rows), F.LabelSidecar({2: F.ANOMALOUS}, True))
    assert F.encode(ds).y.tolist() == [1, -1]


# standardization

def test_constant_column_maps_to_zero():
    m = F.FeatureMatrix(np.array([[1.0, 5.0], [2.0, 5.0], [4.0, 5.0]]), np.array([1, -1, 1]), ("a", "b"))
    s = F.standardize(m)
    assert np.all(s.X[:, 1] == 0)
    assert abs(s.X[:, 0].mean()) < 1e-9 and abs(s.X[:, 0].std() - 1) < 1e-9


def test_test_rows_use_train_statistics():
    X = np.arange(20, dtype=float).reshape(10, 2)
    m = F.FeatureMatrix(X, np.ones(10), ("a", "b"))
    fitted = F.standardize(m, fit_on=range(5))
    expected = (X - X[:5].mean(axis=0)) / X[:5].std(axis=0)
    assert np.allclose(fitted.X, expected)
    again = F.standardize(m.subset(range(5, 10)), stats=fitted.standardization)
    assert np.array_equal(again.X, fitted.X[5:])


@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3), min_size=2, max_size=40))
def test_standardized_fit_set_moments(rows):
    X = np.array(rows)
    s = F.standardize(F.FeatureMatrix(X, np.ones(len(X)), ("a", "b", "c")))
    for j in range(3):
        col = s.X[:, j]
        if np.ptp(X[:, j]) == 0:
            assert np.all(col == 0)
        elif X[:, j].std() > 1e-3:
            assert abs(col.mean()) < 1e-9 and abs(col.std() - 1) < 1e-9


# splitting

def test_plain_split_sizes():
    tr, te = F.split_indices(np.ones(100), 0.7, 0, stratified=False)
    assert (len(tr), len(te)) == (70, 30)


def test_stratified_anomalous_share():
    y = np.array([1] * (3319 - 75) + [-1] * 75)
    for seed in range(5):
        tr, _ = F.split_indices(y, 0.7, seed)
        assert int(np.sum(y[tr] == -1)) in (52, 53)


def test_split_is_deterministic():
    y = np.array([1, -1] * 50)
    a, b = F.split_indices(y, 0.8, 7), F.split_indices(y, 0.8, 7)
    assert all(np.array_equal(p, q) for p, q in zip(a, b))


def test_too_few_rows():
    with pytest.raises(F.TooFewRows):
        F.split_indices(np.array([1, 1, 1, -1]), 0.7, 0)


@given(st.lists(st.sampled_from([1, -1]), min_size=4, max_size=200), st.sampled_from([0.7, 0.8]),
       st.integers(0, 10_000), st.booleans())
def test_split_partitions(y, fraction, seed, stratified):
    y = np.array(y)
    counts = Counter(y.tolist())
    if stratified and min(counts.get(1, 0), counts.get(-1, 0)) < 2:
        return
    tr, te = F.split_indices(y, fraction, seed, stratified)
    assert set(tr).isdisjoint(te) and sorted(np.concatenate([tr, te]).tolist()) == list(range(len(y)))
    if stratified:
        for c in (1, -1):
            share = counts[c] * len(tr) / len(y)
            assert abs(int(np.sum(y[tr] == c)) - share) <= 1
