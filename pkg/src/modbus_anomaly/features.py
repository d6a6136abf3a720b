"""Per-packet feature rows, ground-truth labels and numeric matrices.

Fourteen basic features are copied from the dissected headers; nine derived
features count packets per tumbling second/minute window (anchored at the
first frame), per destination address and per protocol, plus running
max/min/mean statistics of the per-second counts.
"""
from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .capture import PacketRecord

NORMAL = "normal"
ANOMALOUS = "anomalous"
LABELS = (NORMAL, ANOMALOUS)
MISSING = -1

BASIC_COLUMNS = (
    "frame.number",
    "frame.time",
    "eth.src",
    "eth.dst",
    "ip.src",
    "ip.dst",
    "ip.proto",
    "frame.len",
    "tcp.flags",
    "tcp.srcport",
    "tcp.dstport",
    "udp.srcport",
    "udp.dstport",
    "tcp.analysis.lost_segment",
)
DERIVED_COLUMNS = (
    "frame.time.min",
    "packets_per_minute",
    "frame.time.sec",
    "packets_per_sec",
    "packets_per_ip.dst",
    "stats.packets_per_proto",
    "max_packets",
    "min_packets",
    "mean_packets",
)
FEATURE_COLUMNS = BASIC_COLUMNS + DERIVED_COLUMNS
CATEGORICAL_COLUMNS = ("eth.src", "eth.dst", "ip.src", "ip.dst")
LABEL_COLUMN = "label"

US_PER_SEC = 1_000_000
US_PER_MIN = 60 * US_PER_SEC


class LabelError(ValueError):
    pass


class UnknownFrameNumber(LabelError):
    pass


class DuplicateLabel(LabelError):
    pass


class MissingLabel(LabelError):
    pass


class TooFewRows(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class BasicFeatures:
    frame_number: int
    frame_time: int
    eth_src: Optional[str]
    eth_dst: Optional[str]
    ip_src: Optional[str]
    ip_dst: Optional[str]
    ip_proto: Optional[int]
    frame_len: int
    tcp_flags: Optional[int]
    tcp_srcport: Optional[int]
    tcp_dstport: Optional[int]
    udp_srcport: Optional[int]
    udp_dstport: Optional[int]
    lost_segment: bool

    def values(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))


@dataclass(frozen=True)
class DerivedFeatures:
    frame_time_min: int
    packets_per_minute: int
    frame_time_sec: int
    packets_per_sec: int
    packets_per_ip_dst: int
    stats_packets_per_proto: int
    max_packets: int
    min_packets: int
    mean_packets: float

    def values(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))


def extract_basic(records: Sequence[PacketRecord]) -> list[BasicFeatures]:
    return [
        BasicFeatures(
            frame_number=r.frame_number,
            frame_time=r.frame_time,
            eth_src=r.eth_src,
            eth_dst=r.eth_dst,
            ip_src=r.ip_src,
            ip_dst=r.ip_dst,
            ip_proto=r.ip_proto,
            frame_len=r.frame_len,
            tcp_flags=r.tcp_flags,
            tcp_srcport=r.tcp_srcport,
            tcp_dstport=r.tcp_dstport,
            udp_srcport=r.udp_srcport,
            udp_dstport=r.udp_dstport,
            lost_segment=r.lost_segment,
        )
        for r in records
    ]


def derive(rows: Sequence[BasicFeatures]) -> list[DerivedFeatures]:
    """Compute the nine window/count features for time-ordered rows.

    Buckets are tumbling windows anchored at the earliest frame time. The
    max/min/mean columns summarize per-second counts of every second from
    the first one up to and including the row's own second; seconds with no
    traffic count as zero.
    """
    if not rows:
        raise EmptyInput("derive needs at least one row")
    times = np.fromiter((r.frame_time for r in rows), dtype=np.int64, count=len(rows))
    t0 = times.min()
    sec = (times - t0) // US_PER_SEC
    minute = (times - t0) // US_PER_MIN

    per_sec = np.bincount(sec)
    per_min = np.bincount(minute)
    running_max = np.maximum.accumulate(per_sec)
    running_min = np.minimum.accumulate(per_sec)
    running_mean = np.cumsum(per_sec) / np.arange(1, len(per_sec) + 1)

    by_dst = Counter(r.ip_dst for r in rows)
    by_proto = Counter(r.ip_proto for r in rows)
    return [
        DerivedFeatures(
            frame_time_min=int(m),
            packets_per_minute=int(per_min[m]),
            frame_time_sec=int(s),
            packets_per_sec=int(per_sec[s]),
            packets_per_ip_dst=by_dst[r.ip_dst],
            stats_packets_per_proto=by_proto[r.ip_proto],
            max_packets=int(running_max[s]),
            min_packets=int(running_min[s]),
            mean_packets=float(running_mean[s]),
        )
        for r, s, m in zip(rows, sec, minute)
    ]


# --------------------------------------------------------------------------
# labels


@dataclass(frozen=True)
class LabelSidecar:
    labels: dict = field(default_factory=dict)
    default_normal: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.default_normal:
            buf.write("#default_normal\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["frame.number", LABEL_COLUMN])
        for number in sorted(self.labels):
            writer.writerow([number, self.labels[number]])
        return buf.getvalue()

    def counts(self) -> Counter:
        return Counter(self.labels.values())


def parse_sidecar(text: str) -> LabelSidecar:
    default_normal = False
    body = []
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("#"):
            if stripped[1:].strip() == "default_normal":
                default_normal = True
            continue
        if stripped:
            body.append(line)
    labels: dict[int, str] = {}
    reader = csv.reader(body)
    header = next(reader, None)
    if header is not None and [h.strip() for h in header] != ["frame.number", LABEL_COLUMN]:
        raise LabelError(f"sidecar header must be 'frame.number,label', got {header}")
    for row in reader:
        number, label = int(row[0]), row[1].strip()
        if label not in LABELS:
            raise LabelError(f"frame {number}: unknown label {label!r}")
        if number in labels:
            raise DuplicateLabel(f"frame {number} labeled twice")
        labels[number] = label
    return LabelSidecar(labels, default_normal)


def load_sidecar(path) -> LabelSidecar:
    with open(path, encoding="utf-8") as fh:
        return parse_sidecar(fh.read())


@dataclass(frozen=True)
class LabeledDataset:
    basic: tuple[BasicFeatures, ...]
    derived: tuple[DerivedFeatures, ...]
    labels: tuple[str, ...]
    source_name: str = ""

    def __len__(self) -> int:
        return len(self.labels)

    def coverage(self) -> dict[str, int]:
        counts = Counter(self.labels)
        return {label: counts.get(label, 0) for label in LABELS}


def attach_labels(basic: Sequence[BasicFeatures], derived: Sequence[DerivedFeatures],
                  sidecar: LabelSidecar, source_name: str = "") -> LabeledDataset:
    numbers = [b.frame_number for b in basic]
    known = set(numbers)
    unknown = sorted(set(sidecar.labels) - known)
    if unknown:
        raise UnknownFrameNumber(f"sidecar references frames not in capture: {unknown[:10]}")
    labels = []
    for number in numbers:
        label = sidecar.labels.get(number)
        if label is None:
            if not sidecar.default_normal:
                raise MissingLabel(f"frame {number} has no label and #default_normal is not set")
            label = NORMAL
        labels.append(label)
    return LabeledDataset(tuple(basic), tuple(derived), tuple(labels), source_name)


def dataset_from_records(records: Sequence[PacketRecord], sidecar: LabelSidecar,
                         source_name: str = "") -> LabeledDataset:
    basic = extract_basic(records)
    derived = derive(basic) if basic else []
    return attach_labels(basic, derived, sidecar, source_name)


# --------------------------------------------------------------------------
# feature CSV


def _fmt_time(us: int) -> str:
    return f"{us // US_PER_SEC}.{us % US_PER_SEC:06d}"


def _parse_time(text: str) -> int:
    whole, _, frac = text.partition(".")
    return int(whole) * US_PER_SEC + int((frac + "000000")[:6])


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_feature_csv(dataset: LabeledDataset, fh) -> None:
    writer = csv.writer(fh, lineterminator="\r\n")
    writer.writerow(FEATURE_COLUMNS + (LABEL_COLUMN,))
    for b, d, label in zip(dataset.basic, dataset.derived, dataset.labels):
        cells = [_fmt(v) for v in b.values()]
        cells[1] = _fmt_time(b.frame_time)
        cells += [_fmt(v) for v in d.values()]
        writer.writerow(cells + [label])


def dataset_to_csv(dataset: LabeledDataset) -> str:
    buf = io.StringIO()
    write_feature_csv(dataset, buf)
    return buf.getvalue()


def _opt_int(text: str) -> Optional[int]:
    return int(text) if text != "" else None


def _opt_str(text: str) -> Optional[str]:
    return text if text != "" else None


def read_feature_csv(fh, source_name: str = "") -> LabeledDataset:
    reader = csv.reader(fh)
    header = next(reader, None)
    expected = list(FEATURE_COLUMNS + (LABEL_COLUMN,))
    if header != expected:
        raise ValueError(f"feature CSV header mismatch: {header}")
    basic, derived, labels = [], [], []
    for row in reader:
        if not row:
            continue
        basic.append(BasicFeatures(
            frame_number=int(row[0]),
            frame_time=_parse_time(row[1]),
            eth_src=_opt_str(row[2]),
            eth_dst=_opt_str(row[3]),
            ip_src=_opt_str(row[4]),
            ip_dst=_opt_str(row[5]),
            ip_proto=_opt_int(row[6]),
            frame_len=int(row[7]),
            tcp_flags=_opt_int(row[8]),
            tcp_srcport=_opt_int(row[9]),
            tcp_dstport=_opt_int(row[10]),
            udp_srcport=_opt_int(row[11]),
            udp_dstport=_opt_int(row[12]),
            lost_segment=row[13] == "1",
        ))
        derived.append(DerivedFeatures(*(int(v) for v in row[14:22]), float(row[22])))
        if row[23] not in LABELS:
            raise LabelError(f"row {len(labels) + 1}: unknown label {row[23]!r}")
        labels.append(row[23])
    return LabeledDataset(tuple(basic), tuple(derived), tuple(labels), source_name)


def load_feature_csv(path) -> LabeledDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        return read_feature_csv(fh, source_name=str(path))


# --------------------------------------------------------------------------
# numeric encoding


@dataclass
class EncodingMap:
    """First-appearance integer codes for the address columns.

    Codes are arbitrary identifiers; distance-based learners will still
    treat them as ordinal numbers.
    """

    tables: dict = field(default_factory=lambda: {c: {} for c in CATEGORICAL_COLUMNS})

    def code(self, column: str, value) -> int:
        if value is None:
            return MISSING
        table = self.tables[column]
        if value not in table:
            table[value] = len(table)
        return table[value]

    def decode(self, column: str, code: int):
        if code == MISSING:
            return None
        for value, c in self.tables[column].items():
            if c == code:
                return value
        raise KeyError(f"{column}: no value for code {code}")

    def to_dict(self) -> dict:
        return {c: dict(t) for c, t in self.tables.items()}


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros_like(X, dtype=float)
        live = self.scale > 0
        out[:, live] = (X[:, live] - self.mean[live]) / self.scale[live]
        return out


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense float matrix with labels encoded as +1 (normal) / -1 (anomalous)."""

    X: np.ndarray
    y: np.ndarray
    column_names: tuple[str, ...] = FEATURE_COLUMNS
    encoding: Optional[EncodingMap] = None
    standardization: Optional[Standardization] = None

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[1] != len(self.column_names):
            raise ValueError(f"matrix shape {self.X.shape} does not fit {len(self.column_names)} columns")
        if len(self.y) != self.X.shape[0]:
            raise ValueError("labels and rows are misaligned")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def width(self) -> int:
        return self.X.shape[1]

    @property
    def labels(self) -> list[str]:
        return [NORMAL if v > 0 else ANOMALOUS for v in self.y]

    def subset(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx)
        return replace(self, X=self.X[idx], y=self.y[idx])

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.column_names.index(name)]


def label_to_sign(label: str) -> int:
    return 1 if label == NORMAL else -1


def encode(dataset: LabeledDataset, encoding: Optional[EncodingMap] = None) -> FeatureMatrix:
    """Encode rows in :data:`FEATURE_COLUMNS` order; missing values become -1."""
    if len(dataset) == 0:
        raise ValueError("cannot encode an empty dataset")
    encoding = encoding or EncodingMap()
    cat_slots = {BASIC_COLUMNS.index(c): c for c in CATEGORICAL_COLUMNS}
    X = np.empty((len(dataset), len(FEATURE_COLUMNS)), dtype=float)
    for i, (b, d) in enumerate(zip(dataset.basic, dataset.derived)):
        row = []
        for j, value in enumerate(b.values()):
            if j in cat_slots:
                row.append(encoding.code(cat_slots[j], value))
            elif value is None:
                row.append(MISSING)
            else:
                row.append(float(value))
        row.extend(d.values())
        X[i] = row
    y = np.array([label_to_sign(label) for label in dataset.labels], dtype=np.int8)
    return FeatureMatrix(X, y, FEATURE_COLUMNS, encoding)


def fit_standardization(X: np.ndarray) -> Standardization:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[np.ptp(X, axis=0) == 0] = 0.0
    return Standardization(mean, scale)


def standardize(matrix: FeatureMatrix, fit_on=None,
                stats: Optional[Standardization] = None) -> FeatureMatrix:
    """Z-score every column with statistics from ``fit_on`` rows (all rows if None).

    Passing ``stats`` reuses previously fitted statistics, which is how test
    rows are transformed. Constant columns map to zero.
    """
    if stats is None:
        fit_X = matrix.X if fit_on is None else matrix.X[np.asarray(fit_on)]
        if len(fit_X) == 0:
            raise ValueError("standardization fit set is empty")
        stats = fit_standardization(fit_X)
    return replace(matrix, X=stats.apply(matrix.X), standardization=stats)


# --------------------------------------------------------------------------
# train/test split


def _allocate(sizes: Sequence[int], total: int) -> list[int]:
    """Largest-remainder allocation of ``total`` across groups of ``sizes``."""
    n = sum(sizes)
    exact = [s * total / n for s in sizes]
    alloc = [int(e) for e in exact]
    order = sorted(range(len(sizes)), key=lambda i: (-(exact[i] - alloc[i]), i))
    for i in order[: total - sum(alloc)]:
        alloc[i] += 1
    return alloc


def split_indices(y: Sequence[int], train_fraction: float, seed: int,
                  stratified: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/test partition of row indices.

    Stratified mode shuffles each class separately and allocates train rows
    per class by largest remainder, so class ratios hold to within one row.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    y = np.asarray(y)
    n = len(y)
    if n < 2:
        raise TooFewRows("need at least 2 rows to split")
    rng = np.random.default_rng(seed)
    n_train = int(np.floor(train_fraction * n + 0.5))
    if not stratified:
        order = rng.permutation(n)
        return np.sort(order[:n_train]), np.sort(order[n_train:])

    classes = sorted(set(y.tolist()))
    groups = [np.flatnonzero(y == c) for c in classes]
    if any(len(g) < 2 for g in groups):
        raise TooFewRows("stratified split needs at least 2 rows of each class")
    alloc = _allocate([len(g) for g in groups], n_train)
    train, test = [], []
    for group, k in zip(groups, alloc):
        shuffled = rng.permutation(group)
        train.append(shuffled[:k])
        test.append(shuffled[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split(matrix: FeatureMatrix, train_fraction: float, seed: int,
          stratified: bool = True) -> tuple[FeatureMatrix, FeatureMatrix]:
    train_idx, test_idx = split_indices(matrix.y, train_fraction, seed, stratified)
    return matrix.subset(train_idx), matrix.subset(test_idx)


def iter_columns(matrix: FeatureMatrix) -> Iterable[tuple[str, np.ndarray]]:
    for j, name in enumerate(matrix.column_names):
        yield name, matrix.X[:, j]
