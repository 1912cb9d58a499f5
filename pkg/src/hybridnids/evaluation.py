"""Metrics, the three experiment protocols, score densities and throughput."""
from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ._random import stream_seed
from .errors import DataError
from .features import FeatureSchema, MinMaxNormalizer, SampleSet, extract_dataset
from .flows import ClassLabel, parse_label, stream_flows
from .forest import RandomForest, balance_binary, balance_multiclass
from .pipeline import FILTERED_SCORE, HybridDetector
from .vae import VariationalAutoencoder

__all__ = [
    "REPORT_FORMAT",
    "REFERENCE_THROUGHPUT",
    "ConfusionCounts",
    "EvalReport",
    "roc_auc",
    "confusion_metrics",
    "evaluate",
    "prepare_split",
    "run_filter_comparison",
    "run_hybrid_comparison",
    "run_novelty",
    "silverman_bandwidth",
    "export_score_density",
    "write_density_csv",
    "write_roc_csv",
    "BenchReport",
    "bench_throughput",
    "format_table",
]

REPORT_FORMAT = {"format": "hybridnids.report", "version": 1}

# Reference rates from a dual 16-core server; network_demand is the flow rate
# of the monitored network that a deployment must sustain.
REFERENCE_THROUGHPUT = {
    "extraction_flows_per_s": 19000.0,
    "normalization_samples_per_s": 118000.0,
    "forest_samples_per_s": 150000.0,
    "vae_samples_per_s": 8000.0,
    "end_to_end_flows_per_s": 17000.0,
    "network_demand_flows_per_s": 1273.0,
}


def roc_auc(scores, labels):
    """Area under the ROC curve and its vertices.

    Tied scores form a single diagonal ROC segment, which credits each
    tied positive/negative pair with one half. Returns
    ``(auc, [(fpr, tpr), ...])`` starting at (0, 0) and ending at (1, 1).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC AUC needs both positive and negative labels")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0, tp] / n_pos
    fpr = np.r_[0, fp] / n_neg
    # integer trapezoids keep the area exact until the final division
    tp_all, fp_all = np.r_[0, tp], np.r_[0, fp]
    area2 = int(np.sum((fp_all[1:] - fp_all[:-1]) * (tp_all[1:] + tp_all[:-1])))
    auc = area2 / (2.0 * n_pos * n_neg)
    return auc, list(zip(fpr.tolist(), tpr.tolist()))


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def recall1(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else float("nan")

    @property
    def f1(self) -> float:
        d = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / d if d else float("nan")


def confusion_metrics(preds, labels) -> ConfusionCounts:
    preds = np.asarray(preds).astype(int)
    labels = np.asarray(labels).astype(int)
    if preds.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    return ConfusionCounts(
        tp=int(np.sum((preds == 1) & (labels == 1))),
        fp=int(np.sum((preds == 1) & (labels == 0))),
        tn=int(np.sum((preds == 0) & (labels == 0))),
        fn=int(np.sum((preds == 0) & (labels == 1))),
    )


@dataclass
class EvalReport:
    name: str
    auc: float
    recall1: float
    f1: float
    counts: ConfusionCounts
    roc_points: list = field(default_factory=list)
    per_class_recall: dict = field(default_factory=dict)
    score_auc: float | None = None
    score_roc_points: list | None = None

    def to_dict(self, with_curves=True) -> dict:
        d = {
            "name": self.name,
            "auc": self.auc,
            "score_auc": self.score_auc,
            "recall1": self.recall1,
            "f1": self.f1,
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "tn": self.counts.tn,
            "fn": self.counts.fn,
            "per_class_recall": self.per_class_recall,
        }
        if with_curves:
            d["roc_points"] = self.roc_points
            if self.score_roc_points is not None:
                d["score_roc_points"] = self.score_roc_points
        return d


def evaluate(name, preds, labels, scores=None) -> EvalReport:
    """Verdict-level report; adds a score-level AUC when raw scores are given.

    ``labels`` are class labels; every attack class counts as positive.
    """
    labels = np.asarray(labels, dtype=object)
    y = np.array([lab.is_attack for lab in labels], dtype=int)
    preds = np.asarray(preds).astype(int)
    auc, points = roc_auc(preds, y)
    counts = confusion_metrics(preds, y)
    per_class = {}
    for lab in sorted({lab for lab in labels if lab.is_attack}, key=str):
        m = np.array([x is lab for x in labels])
        per_class[lab.value] = float(preds[m].mean())
    report = EvalReport(name, auc, counts.recall1, counts.f1, counts, points, per_class)
    if scores is not None:
        report.score_auc, report.score_roc_points = roc_auc(scores, y)
    return report


def _delta_row(a: EvalReport, b: EvalReport) -> dict:
    """``a`` relative to ``b``; AUC and recall as percentage-point deltas."""
    return {
        "auc_pct": 100.0 * (a.auc - b.auc),
        "recall1_pct": 100.0 * (a.recall1 - b.recall1),
        "tp": a.counts.tp - b.counts.tp,
        "fp": a.counts.fp - b.counts.fp,
    }


def prepare_split(train: SampleSet, test: SampleSet):
    """Drop the blacklist class and fit the shared normalizer on train."""
    train = train.without(ClassLabel.BLACKLIST)
    test = test.without(ClassLabel.BLACKLIST)
    if len(train) == 0 or len(test) == 0:
        raise DataError("empty train or test set")
    norm = MinMaxNormalizer().fit(train.X)
    return train, test, norm


def _normalized(data: SampleSet, norm) -> SampleSet:
    return SampleSet(norm.transform(data.X), data.labels, data.flow_counts, data.src_ips,
                     data.window_indices, data.feature_names)


def _check_two_classes(test: SampleSet):
    y = test.y_binary
    if y.min() == y.max():
        raise DataError("test set holds a single class; AUC is undefined")


def _train_forest(data, mode, seed, omitted=(), n_estimators=100, per_class=1000):
    bseed = stream_seed(seed, "balance")
    if mode == "binary":
        sub = balance_binary(data, omitted, bseed, per_class)
        y = sub.y_binary
    else:
        sub = balance_multiclass(data, bseed, per_class, omitted=omitted)
        y = sub.labels
    return RandomForest(n_estimators=n_estimators, random_state=stream_seed(seed, "forest")).fit(sub.X, y)


def run_filter_comparison(train: SampleSet, test: SampleSet, seed=0, n_estimators=100,
                          per_class=1000) -> dict:
    """Binary versus binarized multi-class filter on the same data."""
    train, test, norm = prepare_split(train, test)
    _check_two_classes(test)
    tr, te = _normalized(train, norm), _normalized(test, norm)
    reports = {}
    for mode in ("binary", "multiclass"):
        forest = _train_forest(tr, mode, seed, n_estimators=n_estimators, per_class=per_class)
        for split, data in (("train", tr), ("test", te)):
            name = f"{mode} ({split})"
            reports[name] = evaluate(name, forest.predict_binary(data.X), data.labels)
    deltas = {
        f"binary vs multiclass ({s})": _delta_row(reports[f"binary ({s})"], reports[f"multiclass ({s})"])
        for s in ("train", "test")
    }
    return _result("filter", seed, reports, deltas)


def _train_vae(train: SampleSet, norm, seed, vae_params=None):
    bg = train.subset(np.array([lab is ClassLabel.BACKGROUND for lab in train.labels]))
    if len(bg) == 0:
        raise DataError("no background samples to train the VAE on")
    params = dict(vae_params or {})
    params.setdefault("random_state", seed)
    return VariationalAutoencoder(**params).fit(norm.transform(bg.X))


def run_hybrid_comparison(train: SampleSet, test: SampleSet, seed=0, vae=None, forest=None,
                          vae_params=None, n_estimators=100, per_class=1000) -> dict:
    """VAE alone versus the filtered hybrid, sharing one VAE and one threshold."""
    train, test, norm = prepare_split(train, test)
    _check_two_classes(test)
    if vae is None:
        vae = _train_vae(train, norm, seed, vae_params)
    if forest is None:
        forest = _train_forest(_normalized(train, norm), "binary", seed,
                               n_estimators=n_estimators, per_class=per_class)
    det = HybridDetector(norm, forest, vae)
    flagged, scores, hybrid, final = det.score_components(test.X)
    tau = det.tau_
    original = evaluate("original", (scores > tau).astype(int), test.labels, scores)
    modified = evaluate("modified", final, test.labels, hybrid)
    out = _result("hybrid", seed, {"original": original, "modified": modified},
                  {"modified vs original": _delta_row(modified, original)})
    out["threshold"] = asdict(vae.threshold_)
    out["filter_positives"] = int(flagged.sum())
    out["scores"] = {
        "labels": [lab.value for lab in test.labels],
        "anomaly": scores.tolist(),
        "hybrid": hybrid.tolist(),
    }
    return out


def run_novelty(train: SampleSet, test: SampleSet, omitted, restricted=True, seed=0, vae=None,
                vae_params=None, n_estimators=100, per_class=1000) -> dict:
    """Zero-day emulation: classes in ``omitted`` are hidden from the filter."""
    omitted = sorted({parse_label(str(c)) for c in omitted}, key=str)
    train, test, norm = prepare_split(train, test)
    present = set(test.labels)
    missing = [c.value for c in omitted if c not in present]
    if missing:
        raise DataError("omitted classes absent from the test set: " + ", ".join(missing))
    if vae is None:
        vae = _train_vae(train, norm, seed, vae_params)
    forest = _train_forest(_normalized(train, norm), "binary", seed, omitted=omitted,
                           n_estimators=n_estimators, per_class=per_class)
    det = HybridDetector(norm, forest, vae)

    evals = {"full": test}
    if restricted:
        keep = set(omitted) | {ClassLabel.BACKGROUND}
        evals["restricted"] = test.subset(np.array([lab in keep for lab in test.labels]))
    reports = {}
    for scope, data in evals.items():
        flagged, scores, hybrid, final = det.score_components(data.X)
        reports[f"hybrid ({scope})"] = evaluate(f"hybrid ({scope})", final, data.labels)
        reports[f"classifier ({scope})"] = evaluate(f"classifier ({scope})", flagged, data.labels)
    out = _result("novelty", seed, reports, {})
    out["omitted"] = [c.value for c in omitted]
    out["threshold"] = asdict(vae.threshold_)
    return out


def _result(experiment, seed, reports, deltas) -> dict:
    return {
        **REPORT_FORMAT,
        "experiment": experiment,
        "seed": seed,
        "reports": reports,
        "deltas": deltas,
    }


def report_to_json(result: dict, with_curves=True) -> str:
    doc = dict(result)
    doc["reports"] = {k: r.to_dict(with_curves) for k, r in result["reports"].items()}
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def format_table(result: dict) -> str:
    lines = [f"{'':28s} {'AUC':>8s} {'Recall(1)':>10s} {'TP':>7s} {'FP':>7s}"]
    for name, r in result["reports"].items():
        lines.append(f"{name:28s} {r.auc:8.4f} {r.recall1:10.4f} {r.counts.tp:7d} {r.counts.fp:7d}")
    for name, d in result["deltas"].items():
        lines.append(f"{name:28s} {d['auc_pct']:+7.2f}% {d['recall1_pct']:+9.2f}% "
                     f"{d['tp']:+7d} {d['fp']:+7d}")
    return "\n".join(lines)


# -- score densities ------------------------------------------------------------

def silverman_bandwidth(x) -> float:
    """Silverman's rule of thumb, ``0.9 * min(std, IQR / 1.34) * n^(-1/5)``.

    Falls back to the std when the IQR vanishes, and to a small fixed width
    for a single point or a constant sample.
    """
    x = np.asarray(x, dtype=float)
    std = float(np.std(x))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(std, (q75 - q25) / 1.34) or std
    if spread <= 0:
        return 1e-3 * max(1.0, float(np.max(np.abs(x))))
    return 0.9 * spread * len(x) ** -0.2


def export_score_density(groups: dict, bandwidth=None, grid_size=512) -> dict:
    """Gaussian KDE per group on an evenly spaced grid.

    Scores equal to the filter score (1.0) are left out. The grid spans the
    included scores padded by three bandwidths on each side, so each curve
    carries essentially all of its mass.
    """
    out = {}
    for name, scores in groups.items():
        x = np.asarray(scores, dtype=float)
        x = x[x != FILTERED_SCORE]
        if x.size == 0:
            raise DataError(f"group {name!r} is empty after excluding filtered scores")
        h = float(bandwidth) if bandwidth is not None else silverman_bandwidth(x)
        if h <= 0:
            raise ValueError("bandwidth must be positive")
        grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, grid_size)
        dens = np.zeros(grid_size)
        for chunk in np.array_split(x, max(1, x.size // 2048)):
            u = (grid[:, None] - chunk[None, :]) / h
            dens += np.exp(-0.5 * u * u).sum(axis=1)
        dens /= x.size * h * math.sqrt(2 * math.pi)
        out[name] = (grid, dens)
    return out


def write_density_csv(densities: dict, path):
    with open(path, "w") as fh:
        fh.write("group,x,density\n")
        for name, (grid, dens) in densities.items():
            for gx, gd in zip(grid, dens):
                fh.write(f"{name},{gx!r},{gd!r}\n")


def write_roc_csv(reports: dict, path, key="score_roc_points"):
    with open(path, "w") as fh:
        fh.write("detector,fpr,tpr\n")
        for name, r in reports.items():
            points = getattr(r, key) or r.roc_points
            for fpr, tpr in points:
                fh.write(f"{name},{fpr!r},{tpr!r}\n")


# -- throughput -----------------------------------------------------------------

@dataclass
class BenchReport:
    flows: int
    samples: int
    raw: list
    median: dict
    reference_rates: dict = field(default_factory=lambda: dict(REFERENCE_THROUGHPUT))

    def to_dict(self) -> dict:
        return asdict(self)


def _rates(times, n_flows, n_samples):
    total = sum(times.values())
    return {
        "extraction_flows_per_s": n_flows / times["extraction"],
        "normalization_samples_per_s": n_samples / times["normalization"],
        "forest_samples_per_s": n_samples / times["forest"],
        "vae_samples_per_s": n_samples / times["vae"],
        "end_to_end_flows_per_s": n_flows / total,
    }


def bench_throughput(flow_path, detector: HybridDetector, schema: FeatureSchema = FeatureSchema(),
                     repetitions=3) -> BenchReport:
    """Time each pipeline stage serially, ``repetitions`` times.

    ``median`` is computed from the per-stage median times. Its end-to-end
    rate divides the flow count by the sum of those times, so it never
    exceeds the rate implied by any single stage.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    norm, forest, vae = detector._components()
    raw = []
    n_flows = n_samples = 0
    for _ in range(repetitions):
        t0 = time.perf_counter()
        flows = list(stream_flows(flow_path))
        samples, _ = extract_dataset(flows, schema)
        if not samples:
            raise DataError("benchmark input produced no samples")
        X = SampleSet.from_samples(samples, schema).X
        t1 = time.perf_counter()
        Xn = norm.transform(X)
        t2 = time.perf_counter()
        forest.predict_binary(Xn)
        t3 = time.perf_counter()
        vae.score_samples(Xn)
        t4 = time.perf_counter()
        n_flows, n_samples = len(flows), len(samples)
        times = {
            "extraction": t1 - t0,
            "normalization": max(t2 - t1, 1e-9),
            "forest": max(t3 - t2, 1e-9),
            "vae": max(t4 - t3, 1e-9),
        }
        raw.append({"seconds": times, "rates": _rates(times, n_flows, n_samples)})
    med_times = {k: statistics.median(r["seconds"][k] for r in raw) for k in raw[0]["seconds"]}
    return BenchReport(n_flows, n_samples, raw, _rates(med_times, n_flows, n_samples))
