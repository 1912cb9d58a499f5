"""Random Forest misuse filter and the class-balancing recipes used to train it."""
from __future__ import annotations

import json
import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DataError
from .flows import ClassLabel, parse_label

__all__ = [
    "DecisionTree",
    "RandomForest",
    "balance_binary",
    "balance_multiclass",
    "save_forest",
    "load_forest",
]

FOREST_FORMAT = "hybridnids.forest"
FOREST_FORMAT_VERSION = 1


class DecisionTree:
    """CART tree grown with Gini impurity, stored as flat node arrays.

    ``feature[i] == -1`` marks a leaf. ``value[i]`` holds the class counts
    of the training samples that reached node ``i``.
    """

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @classmethod
    def grow(cls, X, y, n_classes, max_features, rng, min_samples_split=2, max_depth=None):
        n, d = X.shape
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y] = 1.0

        feature, threshold, left, right, value = [], [], [], [], []

        def new_node(counts):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(counts)
            return len(feature) - 1

        root = new_node(onehot.sum(axis=0))
        stack = [(root, np.arange(n), 0)]
        while stack:
            node, idx, depth = stack.pop()
            counts = value[node]
            if (np.count_nonzero(counts) <= 1 or len(idx) < min_samples_split
                    or (max_depth is not None and depth >= max_depth)):
                continue
            split = _best_split(X, onehot, idx, max_features, rng)
            if split is None:
                continue
            f, thr = split
            go_left = X[idx, f] <= thr
            li, ri = idx[go_left], idx[~go_left]
            feature[node] = f
            threshold[node] = thr
            left[node] = new_node(onehot[li].sum(axis=0))
            right[node] = new_node(onehot[ri].sum(axis=0))
            stack.append((right[node], ri, depth + 1))
            stack.append((left[node], li, depth + 1))
        return cls(feature, threshold, left, right, value)

    def apply(self, X) -> np.ndarray:
        """Index of the leaf each row lands in."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node[rows]]
            internal = f >= 0
            if not internal.any():
                return node
            rows = rows[internal]
            f = f[internal]
            cur = node[rows]
            go_left = X[rows, f] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])

    def predict_index(self, X) -> np.ndarray:
        # argmax picks the lowest class index on ties
        return np.argmax(self.value[self.apply(X)], axis=1)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DecisionTree":
        return cls(data["feature"], data["threshold"], data["left"], data["right"], data["value"])


def _best_split(X, onehot, idx, max_features, rng):
    """Best Gini split over a random subset of features, or None.

    Features constant within the node do not count towards ``max_features``;
    the search continues past them so a valid split is found whenever one
    exists.
    """
    n = len(idx)
    Yn = onehot[idx]
    total = Yn.sum(axis=0)
    n_left = np.arange(1, n, dtype=float)
    n_right = n - n_left

    best_score, best = -np.inf, None
    evaluated = 0
    for f in rng.permutation(X.shape[1]):
        if evaluated >= max_features:
            break
        x = X[idx, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        valid = xs[:-1] < xs[1:]
        if not valid.any():
            continue
        evaluated += 1
        cum = np.cumsum(Yn[order], axis=0)[:-1]
        rest = total - cum
        # minimising weighted Gini == maximising sum(L^2)/nL + sum(R^2)/nR
        score = (cum * cum).sum(axis=1) / n_left + (rest * rest).sum(axis=1) / n_right
        score[~valid] = -np.inf
        i = int(np.argmax(score))
        if score[i] > best_score:
            thr = (xs[i] + xs[i + 1]) / 2.0
            if thr >= xs[i + 1]:
                thr = xs[i]
            best_score, best = score[i], (int(f), float(thr))
    return best


def _resolve_max_features(max_features, n_features):
    if max_features is None:
        return n_features
    if max_features == "sqrt":
        return max(1, int(math.isqrt(n_features)))
    if max_features == "log2":
        return max(1, int(math.log2(n_features)))
    if isinstance(max_features, float):
        return max(1, int(max_features * n_features))
    k = int(max_features)
    if not 1 <= k <= n_features:
        raise ValueError(f"max_features must lie in [1, {n_features}]")
    return k


def _tree_rng(random_state, tree_index):
    return np.random.default_rng(np.random.SeedSequence([int(random_state), tree_index]))


class RandomForest(ClassifierMixin, BaseEstimator):
    """Bagged ensemble of Gini CART trees with hard majority voting.

    Each tree draws its own RNG stream from ``(random_state, tree_index)``,
    so results do not depend on the order trees are built in.
    ``mode_`` is ``"binary"`` when the targets are ``{0, 1}`` and
    ``"multiclass"`` when they are class labels.
    """

    def __init__(self, n_estimators=100, max_features="sqrt", max_depth=None,
                 min_samples_split=2, bootstrap=True, random_state=0):
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.bootstrap = bootstrap
        self.random_state = random_state

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError("X and y have different lengths")
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        classes, y_idx = np.unique(y, return_inverse=True)
        if len(classes) < 2:
            raise DataError("need at least two distinct classes to train a forest")
        self.classes_ = classes
        self.mode_ = "binary" if set(classes.tolist()) <= {0, 1} else "multiclass"
        self.n_features_in_ = X.shape[1]
        k = _resolve_max_features(self.max_features, X.shape[1])

        n = len(X)
        self.estimators_ = []
        for t in range(self.n_estimators):
            rng = _tree_rng(self.random_state, t)
            rows = rng.integers(0, n, n) if self.bootstrap else np.arange(n)
            self.estimators_.append(DecisionTree.grow(
                X[rows], y_idx[rows], len(classes), k, rng,
                min_samples_split=self.min_samples_split, max_depth=self.max_depth,
            ))
        return self

    def _check(self, X):
        check_is_fitted(self, "estimators_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def vote_counts(self, X) -> np.ndarray:
        X = self._check(X)
        votes = np.zeros((len(X), len(self.classes_)), dtype=np.int64)
        rows = np.arange(len(X))
        for tree in self.estimators_:
            votes[rows, tree.predict_index(X)] += 1
        return votes

    def predict_proba(self, X) -> np.ndarray:
        """Fraction of trees voting for each class."""
        return self.vote_counts(X) / len(self.estimators_)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.vote_counts(X), axis=1)]

    def predict_binary(self, X) -> np.ndarray:
        """Attack (1) versus background (0), whatever the training mode."""
        pred = self.predict(X)
        if self.mode_ == "binary":
            return pred.astype(int)
        return np.array([parse_label(str(p)).is_attack for p in pred], dtype=int)

    def to_dict(self) -> dict:
        check_is_fitted(self, "estimators_")
        return {
            "format": FOREST_FORMAT,
            "version": FOREST_FORMAT_VERSION,
            "params": self.get_params(),
            "mode": self.mode_,
            "classes": [c if self.mode_ == "binary" else str(c) for c in self.classes_.tolist()],
            "n_features": self.n_features_in_,
            "trees": [t.to_dict() for t in self.estimators_],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RandomForest":
        if data.get("format") != FOREST_FORMAT or data.get("version") != FOREST_FORMAT_VERSION:
            raise DataError("not a supported forest model document")
        model = cls(**data["params"])
        model.mode_ = data["mode"]
        if model.mode_ == "binary":
            model.classes_ = np.array(data["classes"], dtype=int)
        else:
            model.classes_ = np.array([parse_label(c) for c in data["classes"]], dtype=object)
        model.n_features_in_ = data["n_features"]
        model.estimators_ = [DecisionTree.from_dict(t) for t in data["trees"]]
        return model


def save_forest(model: RandomForest, path, **extra):
    doc = model.to_dict()
    doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_forest(path):
    """Return ``(model, document)``; the document carries any extra metadata."""
    with open(path) as fh:
        doc = json.load(fh)
    return RandomForest.from_dict(doc), doc


def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _resample(idx, target, rng):
    if len(idx) >= target:
        return rng.choice(idx, target, replace=False)
    extra = rng.choice(idx, target - len(idx), replace=True)
    return np.concatenate([idx, extra])


def _class_indices(labels):
    out = {}
    for i, lab in enumerate(labels):
        out.setdefault(lab, []).append(i)
    return {lab: np.array(v) for lab, v in out.items()}


def _check_required(by_class, required):
    missing = [c for c in required if c not in by_class]
    if missing:
        raise DataError("classes absent from the input: " + ", ".join(sorted(map(str, missing))))


def balance_binary(samples, omitted=(), seed=0, per_class=1000, required=None):
    """Balanced attack/background subset at a 1:1 ratio.

    Every non-omitted attack class is under- or oversampled to ``per_class``
    rows and background is resampled to ``per_class`` times the number of
    included attack classes. Accepts anything with a ``labels`` array and a
    ``subset`` method (a :class:`~hybridnids.features.SampleSet`).
    """
    rng = _as_rng(seed)
    omitted = {parse_label(str(c)) for c in omitted}
    by_class = _class_indices(samples.labels)
    if required is not None:
        _check_required(by_class, required)
    if ClassLabel.BACKGROUND not in by_class:
        raise DataError("no background samples to balance against")
    attacks = sorted((c for c in by_class if c.is_attack and c not in omitted), key=str)
    if not attacks:
        raise DataError("no attack classes left to train on")
    parts = [_resample(by_class[c], per_class, rng) for c in attacks]
    parts.append(_resample(by_class[ClassLabel.BACKGROUND], per_class * len(attacks), rng))
    return samples.subset(np.sort(np.concatenate(parts)))


def balance_multiclass(samples, seed=0, per_class=1000, omitted=(), required=None):
    """Every present class, background included, resampled to ``per_class`` rows."""
    rng = _as_rng(seed)
    omitted = {parse_label(str(c)) for c in omitted}
    by_class = _class_indices(samples.labels)
    if required is not None:
        _check_required(by_class, required)
    classes = sorted((c for c in by_class if c not in omitted), key=str)
    if not classes:
        raise DataError("no classes to balance")
    parts = [_resample(by_class[c], per_class, rng) for c in classes]
    return samples.subset(np.sort(np.concatenate(parts)))
