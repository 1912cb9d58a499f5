"""Serial hybrid detector: forest prefilter first, VAE on what it passes."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted

from ._random import stream_seed
from .errors import DataError, SchemaMismatchError
from .features import FeatureSchema, MinMaxNormalizer, SampleSet, extract_dataset
from .flows import ClassLabel, stream_flows
from .forest import RandomForest, balance_binary, load_forest
from .vae import VariationalAutoencoder, load_vae

__all__ = [
    "FILTERED_SCORE",
    "DetectionResult",
    "score_sample",
    "HybridDetector",
    "load_detector",
    "run_pipeline",
    "write_results",
]

# Score assigned to samples the prefilter flags as attacks.
FILTERED_SCORE = 1.0


@dataclass(frozen=True)
class DetectionResult:
    src_ip: str
    window_index: int
    filter_verdict: int
    anomaly_score: float
    hybrid_score: float
    final_verdict: int
    true_label: ClassLabel | None = None


def _check_tau(tau):
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"threshold {tau} lies outside [0, 1]")


def score_sample(forest, vae, tau, sample, key=None, true_label=None) -> DetectionResult:
    """Score one normalized 69-vector.

    ``anomaly_score`` is always the VAE reconstruction error; ``hybrid_score``
    replaces it with 1.0 when the filter flags the sample.
    """
    _check_tau(tau)
    x = np.atleast_2d(np.asarray(sample, dtype=float))
    if x.shape[0] != 1:
        raise ValueError("score_sample takes a single sample")
    flagged = int(forest.predict_binary(x)[0])
    score = float(vae.score_samples(x)[0])
    hybrid = FILTERED_SCORE if flagged else score
    final = 1 if flagged else int(score > tau)
    src, window = (key.src_ip, key.window_index) if key is not None else ("", -1)
    return DetectionResult(src, window, flagged, score, hybrid, final, true_label)


class HybridDetector(ClassifierMixin, BaseEstimator):
    """Type-2 hybrid: a misuse filter in front of an anomaly detector.

    Inputs are raw window features; the detector owns the min-max
    normalizer shared by both models. ``fit`` takes class labels, trains the
    filter on a 1:1 balanced subset and the VAE on background rows only.
    Pre-fitted components can be passed in and ``fit`` skipped.
    """

    def __init__(self, normalizer=None, forest=None, vae=None, tau=None, omitted=(),
                 per_class=1000, random_state=0):
        self.normalizer = normalizer
        self.forest = forest
        self.vae = vae
        self.tau = tau
        self.omitted = omitted
        self.per_class = per_class
        self.random_state = random_state

    def fit(self, X, labels):
        X = check_array(X, dtype=float)
        labels = np.asarray(labels, dtype=object)
        norm = (clone(self.normalizer) if self.normalizer is not None else MinMaxNormalizer()).fit(X)
        Xn = norm.transform(X)
        data = SampleSet(Xn, labels, np.zeros(len(X), int), np.array([""] * len(X), dtype=object),
                         np.zeros(len(X), int), [])
        balanced = balance_binary(data, self.omitted, stream_seed(self.random_state, "balance"),
                                  self.per_class)
        forest = clone(self.forest) if self.forest is not None else RandomForest(
            random_state=stream_seed(self.random_state, "forest"))
        forest.fit(balanced.X, balanced.y_binary)
        vae = (clone(self.vae) if self.vae is not None
               else VariationalAutoencoder(random_state=self.random_state))
        background = np.array([lab is ClassLabel.BACKGROUND for lab in labels])
        vae.fit(Xn[background])
        self.normalizer_, self.forest_, self.vae_ = norm, forest, vae
        self.classes_ = np.array([0, 1])
        return self

    @property
    def tau_(self) -> float:
        tau = self.tau if self.tau is not None else self.vae_.threshold_.tau
        _check_tau(tau)
        return tau

    def _components(self):
        if not hasattr(self, "forest_"):
            if self.forest is None or self.vae is None or self.normalizer is None:
                check_is_fitted(self, "forest_")
            self.normalizer_, self.forest_, self.vae_ = self.normalizer, self.forest, self.vae
            self.classes_ = np.array([0, 1])
        return self.normalizer_, self.forest_, self.vae_

    def score_components(self, X):
        """``(filter_verdicts, anomaly_scores, hybrid_scores, final_verdicts)``."""
        norm, forest, vae = self._components()
        Xn = norm.transform(X)
        tau = self.tau_
        flagged = forest.predict_binary(Xn).astype(int)
        scores = vae.score_samples(Xn)
        hybrid = np.where(flagged == 1, FILTERED_SCORE, scores)
        final = np.where(flagged == 1, 1, (scores > tau).astype(int))
        return flagged, scores, hybrid, final

    def score_samples(self, X):
        return self.score_components(X)[2]

    def predict(self, X):
        return self.score_components(X)[3]


def load_detector(forest_path, vae_path, schema: FeatureSchema = FeatureSchema(), tau=None):
    """Assemble a detector from saved models, checking they agree on the schema."""
    forest, fdoc = load_forest(forest_path)
    vae, vdoc = load_vae(vae_path)
    for doc, what in ((fdoc, "forest model"), (vdoc, "VAE model")):
        schema.check_version(doc.get("schema_version", "?"), what)
    if fdoc.get("normalizer") != vdoc.get("normalizer"):
        raise SchemaMismatchError("forest and VAE were trained with different normalizers")
    norm = MinMaxNormalizer.from_dict(vdoc["normalizer"])
    return HybridDetector(norm, forest, vae, tau=tau)


def run_pipeline(flow_path, detector: HybridDetector, schema: FeatureSchema = FeatureSchema(),
                 with_labels=True):
    """Flows on disk to one :class:`DetectionResult` per kept window."""
    samples, _ = extract_dataset(stream_flows(flow_path), schema)
    if not samples:
        return []
    data = SampleSet.from_samples(samples, schema)
    flagged, scores, hybrid, final = detector.score_components(data.X)
    return [
        DetectionResult(
            data.src_ips[i], int(data.window_indices[i]), int(flagged[i]), float(scores[i]),
            float(hybrid[i]), int(final[i]), data.labels[i] if with_labels else None)
        for i in range(len(data))
    ]


def write_results(results, path, with_labels=True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["src_ip", "window_index", "filter_verdict", "anomaly_score", "hybrid_score",
                  "final_verdict"]
        w.writerow(header + (["true_label"] if with_labels else []))
        for r in results:
            row = [r.src_ip, r.window_index, r.filter_verdict, repr(r.anomaly_score),
                   repr(r.hybrid_score), r.final_verdict]
            if with_labels:
                if r.true_label is None:
                    raise DataError("result carries no true label")
                row.append(r.true_label.value)
            w.writerow(row)
