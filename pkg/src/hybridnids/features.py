"""Per-(source IP, 3-minute window) feature extraction.

Each kept window becomes a 69-dimensional vector::

    [0..4]    means of duration, packets, bytes, packet rate, byte rate
    [5..9]    population standard deviations of the same quantities
    [10..14]  Shannon entropies (bits) of src_port, dst_port, dst_ip,
              protocol and tcp flag pattern
    [15..41]  fraction of flows whose src_port is each tracked port
    [42..68]  the same for dst_port
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DataError, SchemaMismatchError
from .flows import ClassLabel, FlowRecord, parse_label

__all__ = [
    "DEFAULT_PORTS",
    "FeatureSchema",
    "WindowKey",
    "AggregatedSample",
    "VisibilityReport",
    "assign_window",
    "shannon_entropy",
    "majority_label",
    "aggregate_window",
    "extract_dataset",
    "WindowFeatureExtractor",
    "MinMaxNormalizer",
    "SampleSet",
    "write_samples",
    "read_samples",
]

DEFAULT_PORTS = (
    20, 21, 22, 23, 25, 50, 51, 53, 67, 68, 69, 80, 110, 119, 123, 135,
    136, 137, 138, 139, 143, 161, 162, 389, 443, 989, 990,
)

BASE_STATS = ("duration", "packets", "bytes", "packet_rate", "byte_rate")
ENTROPY_FIELDS = ("src_port", "dst_port", "dst_ip", "protocol", "tcp_flags")

# Rates divide by duration clamped at 1 ms.
MIN_RATE_DURATION = 1e-3


@dataclass(frozen=True)
class FeatureSchema:
    ports: tuple[int, ...] = DEFAULT_PORTS
    min_flows: int = 10
    window_seconds: float = 180.0

    def __post_init__(self):
        object.__setattr__(self, "ports", tuple(int(p) for p in self.ports))
        if len(set(self.ports)) != len(self.ports):
            raise ValueError("tracked ports must be unique")
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be positive")
        if self.min_flows < 0:
            raise ValueError("min_flows must be >= 0")

    @property
    def n_features(self) -> int:
        return 2 * len(BASE_STATS) + len(ENTROPY_FIELDS) + 2 * len(self.ports)

    @property
    def feature_names(self) -> list[str]:
        return (
            [f"mean_{s}" for s in BASE_STATS]
            + [f"std_{s}" for s in BASE_STATS]
            + [f"entropy_{s}" for s in ENTROPY_FIELDS]
            + [f"src_port_{p}" for p in self.ports]
            + [f"dst_port_{p}" for p in self.ports]
        )

    @property
    def version(self) -> str:
        """Short fingerprint; artifacts built under different schemas differ."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "ports": list(self.ports),
            "min_flows": self.min_flows,
            "window_seconds": self.window_seconds,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureSchema":
        return cls(
            ports=tuple(data.get("ports", DEFAULT_PORTS)),
            min_flows=int(data.get("min_flows", 10)),
            window_seconds=float(data.get("window_seconds", 180.0)),
        )

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def check_version(self, other_version: str, what: str = "artifact"):
        if other_version != self.version:
            raise SchemaMismatchError(
                f"{what} was built with feature schema {other_version}, "
                f"expected {self.version}"
            )


@dataclass(frozen=True, order=True)
class WindowKey:
    window_index: int
    src_ip: str


@dataclass
class AggregatedSample:
    key: WindowKey
    features: np.ndarray
    label: ClassLabel
    flow_count: int


def assign_window(flow: FlowRecord, window_seconds: float = 180.0) -> WindowKey:
    return WindowKey(int(math.floor(flow.end_time / window_seconds)), flow.src_ip)


def shannon_entropy(counts) -> float:
    """Entropy in bits of a distribution given by category counts.

    ``counts`` may be a mapping (values are used) or any iterable of counts.
    """
    if hasattr(counts, "values"):
        counts = counts.values()
    c = np.asarray(list(counts), dtype=float)
    if c.size == 0 or np.any(c < 0) or c.sum() <= 0:
        raise ValueError("entropy needs non-negative counts with a positive total")
    # sorted so the result does not depend on category order
    c = np.sort(c[c > 0])
    if c.size == 1:
        return 0.0
    p = c / math.fsum(c)
    return float(-math.fsum(p * np.log2(p)))


def _vote_key(label: ClassLabel, count: int):
    # most frequent first, then attacks before background, then by name
    return (-count, not label.is_attack, label.value)


def majority_label(labels: Iterable[ClassLabel]) -> ClassLabel:
    """Strict-majority vote with a deterministic count-based fallback.

    Without a strict majority the most frequent label wins; ties prefer an
    attack over background, then the lexicographically smaller name.
    """
    counts = Counter(labels)
    if not counts:
        raise ValueError("cannot vote on an empty label sequence")
    return min(counts.items(), key=lambda kv: _vote_key(*kv))[0]


def aggregate_window(flows: Sequence[FlowRecord], schema: FeatureSchema = FeatureSchema(),
                     key: WindowKey | None = None) -> AggregatedSample:
    n = len(flows)
    if n <= schema.min_flows:
        raise DataError(
            f"window holds {n} flows; more than {schema.min_flows} are required"
        )
    if key is None:
        key = assign_window(flows[0], schema.window_seconds)
    dur = np.fromiter((f.duration for f in flows), float, n)
    pkts = np.fromiter((f.packets for f in flows), float, n)
    byts = np.fromiter((f.bytes for f in flows), float, n)
    clamped = np.maximum(dur, MIN_RATE_DURATION)
    stats = np.stack([dur, pkts, byts, pkts / clamped, byts / clamped])

    src_counts = Counter(f.src_port for f in flows)
    dst_counts = Counter(f.dst_port for f in flows)
    entropies = [
        shannon_entropy(src_counts),
        shannon_entropy(dst_counts),
        shannon_entropy(Counter(f.dst_ip for f in flows)),
        shannon_entropy(Counter(f.protocol for f in flows)),
        shannon_entropy(Counter(f.tcp_flags for f in flows)),
    ]
    src_prop = [src_counts.get(p, 0) / n for p in schema.ports]
    dst_prop = [dst_counts.get(p, 0) / n for p in schema.ports]

    # fsum keeps the statistics exactly invariant to flow order
    means = np.array([math.fsum(row) / n for row in stats])
    stds = np.array([math.sqrt(math.fsum((row - m) ** 2) / n) for row, m in zip(stats, means)])
    features = np.concatenate([
        means,
        stds,
        entropies,
        src_prop,
        dst_prop,
    ])
    label = majority_label(f.label for f in flows)
    return AggregatedSample(key, features, label, n)


@dataclass
class VisibilityReport:
    """Per-class flow accounting for one extraction run.

    ``total`` counts every input flow, ``omitted`` the flows whose window
    failed the minimum-flow filter, ``kept`` the flows of surviving windows
    and ``outvoted`` the kept flows whose label lost the window vote.
    """

    total: Counter = field(default_factory=Counter)
    omitted: Counter = field(default_factory=Counter)
    kept: Counter = field(default_factory=Counter)
    outvoted: Counter = field(default_factory=Counter)

    def omitted_fraction(self, label: ClassLabel) -> float:
        t = self.total[label]
        return self.omitted[label] / t if t else 0.0

    def outvoted_fraction(self, label: ClassLabel) -> float:
        t = self.total[label]
        return self.outvoted[label] / t if t else 0.0

    def to_dict(self) -> dict:
        return {
            label.value: {
                "total_flows": self.total[label],
                "omitted_flows": self.omitted[label],
                "kept_flows": self.kept[label],
                "outvoted_flows": self.outvoted[label],
                "omitted_fraction": self.omitted_fraction(label),
                "outvoted_fraction": self.outvoted_fraction(label),
            }
            for label in ClassLabel
        }


def extract_dataset(flows: Iterable[FlowRecord], schema: FeatureSchema = FeatureSchema()):
    """Group flows into windows and aggregate every window that passes the filter.

    Returns ``(samples, report)``; samples are ordered by window index, then
    source IP.
    """
    groups: dict[WindowKey, list[FlowRecord]] = defaultdict(list)
    width = schema.window_seconds
    for flow in flows:
        groups[WindowKey(int(math.floor(flow.end_time / width)), flow.src_ip)].append(flow)

    report = VisibilityReport()
    samples = []
    for key in sorted(groups):
        members = groups[key]
        counts = Counter(f.label for f in members)
        report.total.update(counts)
        if len(members) <= schema.min_flows:
            report.omitted.update(counts)
            continue
        sample = aggregate_window(members, schema, key)
        report.kept.update(counts)
        for label, c in counts.items():
            if label is not sample.label:
                report.outvoted[label] += c
        samples.append(sample)
    return samples, report


@dataclass
class SampleSet:
    """Columnar view of extracted samples, as read back from CSV."""

    X: np.ndarray
    labels: np.ndarray
    flow_counts: np.ndarray
    src_ips: np.ndarray
    window_indices: np.ndarray
    feature_names: list[str]

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_samples(cls, samples: Sequence[AggregatedSample], schema: FeatureSchema = FeatureSchema()):
        X = (np.vstack([s.features for s in samples]) if samples
             else np.empty((0, schema.n_features)))
        return cls(
            X=X,
            labels=np.array([s.label for s in samples], dtype=object),
            flow_counts=np.array([s.flow_count for s in samples], dtype=int),
            src_ips=np.array([s.key.src_ip for s in samples], dtype=object),
            window_indices=np.array([s.key.window_index for s in samples], dtype=int),
            feature_names=schema.feature_names,
        )

    @property
    def y_binary(self) -> np.ndarray:
        return np.array([lab.is_attack for lab in self.labels], dtype=int)

    def subset(self, mask) -> "SampleSet":
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return SampleSet(self.X[idx], self.labels[idx], self.flow_counts[idx],
                         self.src_ips[idx], self.window_indices[idx], self.feature_names)

    def without(self, *classes: ClassLabel) -> "SampleSet":
        drop = set(classes)
        return self.subset(np.array([lab not in drop for lab in self.labels], dtype=bool))


def write_samples(samples, path, schema: FeatureSchema = FeatureSchema()):
    if not isinstance(samples, SampleSet):
        samples = SampleSet.from_samples(samples, schema)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.feature_names + ["label", "flow_count", "src_ip", "window_index"])
        for i in range(len(samples)):
            w.writerow([repr(float(v)) for v in samples.X[i]] + [
                samples.labels[i].value, int(samples.flow_counts[i]),
                samples.src_ips[i], int(samples.window_indices[i]),
            ])


def read_samples(path, schema: FeatureSchema = FeatureSchema()) -> SampleSet:
    """Read a sample CSV, refusing files written under a different schema."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        try:
            header = next(r)
        except StopIteration:
            raise DataError(f"{path}: empty sample file") from None
        expected = schema.feature_names + ["label", "flow_count", "src_ip", "window_index"]
        if header != expected:
            raise SchemaMismatchError(f"{path}: sample columns do not match the active feature schema")
        d = schema.n_features
        X, labels, counts, ips, windows = [], [], [], [], []
        for line_no, row in enumerate(r, start=2):
            if len(row) != d + 4:
                raise DataError(f"{path}: line {line_no}: wrong column count")
            try:
                X.append([float(v) for v in row[:d]])
                labels.append(parse_label(row[d]))
                counts.append(int(row[d + 1]))
                ips.append(row[d + 2])
                windows.append(int(row[d + 3]))
            except ValueError as exc:
                raise DataError(f"{path}: line {line_no}: {exc}") from None
    return SampleSet(
        X=np.array(X, dtype=float).reshape(-1, d),
        labels=np.array(labels, dtype=object),
        flow_counts=np.array(counts, dtype=int),
        src_ips=np.array(ips, dtype=object),
        window_indices=np.array(windows, dtype=int),
        feature_names=schema.feature_names,
    )


class WindowFeatureExtractor(TransformerMixin, BaseEstimator):
    """Transformer turning a flow sequence into the window feature matrix.

    ``transform`` is stateless apart from exposing the last run's
    ``samples_`` and ``visibility_`` for label and accounting access.
    """

    def __init__(self, ports=DEFAULT_PORTS, min_flows=10, window_seconds=180.0):
        self.ports = ports
        self.min_flows = min_flows
        self.window_seconds = window_seconds

    @property
    def schema(self) -> FeatureSchema:
        return FeatureSchema(tuple(self.ports), self.min_flows, self.window_seconds)

    def fit(self, flows=None, y=None):
        return self

    def transform(self, flows):
        schema = self.schema
        samples, report = extract_dataset(flows, schema)
        self.samples_ = SampleSet.from_samples(samples, schema)
        self.visibility_ = report
        return self.samples_.X

    def get_feature_names_out(self, input_features=None):
        return np.array(self.schema.feature_names, dtype=object)


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Per-feature min-max scaling learned on training data, clamped to [0, 1].

    Features whose training range is empty map to 0.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.data_min_ = X.min(axis=0)
        self.data_max_ = X.max(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "data_min_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        span = self.data_max_ - self.data_min_
        safe = np.where(span > 0, span, 1.0)
        out = np.clip((X - self.data_min_) / safe, 0.0, 1.0)
        out[:, span <= 0] = 0.0
        return out

    def to_dict(self) -> dict:
        check_is_fitted(self, "data_min_")
        return {"min": self.data_min_.tolist(), "max": self.data_max_.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "MinMaxNormalizer":
        n = cls()
        n.data_min_ = np.asarray(data["min"], dtype=float)
        n.data_max_ = np.asarray(data["max"], dtype=float)
        n.n_features_in_ = n.data_min_.shape[0]
        return n
