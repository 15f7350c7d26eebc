"""Random forest classifier with Gini splits and mean-decrease-in-impurity importances.

Trees are grown depth-first (left child first).  Tree ``t`` draws all of its
randomness (bootstrap rows, per-node feature subsets) from the stream
``rng.stream(seed, t)``, so a trained model is a pure function of the data
and hyperparameters however many worker threads build it.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from . import rng as rngmod
from .errors import DegenerateTrainingError, InvalidInputError, ParseError

FORMAT = "ovmorph.forest"
FORMAT_VERSION = 1
# relative margin a split score must clear to count as a strict impurity decrease
_GAIN_EPS = 1e-12


@dataclass(frozen=True)
class ForestHyperparams:
    n_trees: int = 200
    max_depth: int | None = None
    min_samples_leaf: int = 1
    mtry: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise InvalidInputError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise InvalidInputError("max_depth must be a positive integer or None")
        if self.min_samples_leaf < 1:
            raise InvalidInputError("min_samples_leaf must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise InvalidInputError("mtry must be >= 1")

    def resolve_mtry(self, n_features: int) -> int:
        mtry = self.mtry if self.mtry is not None else math.ceil(math.sqrt(n_features))
        if mtry > n_features:
            raise InvalidInputError(f"mtry={mtry} exceeds the {n_features} available features")
        return mtry


@dataclass
class DecisionTree:
    """Flat node arrays; ``feature[i] == -1`` marks a leaf.

    Samples with ``x[feature] <= threshold`` go to ``left``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_classes) training class counts

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_splits(self) -> int:
        return int((self.feature >= 0).sum())

    def apply(self, X: np.ndarray) -> np.ndarray:
        return kernels.apply_tree(X, self.feature, self.threshold, self.left, self.right)

    def leaf_fractions(self) -> np.ndarray:
        totals = self.counts.sum(axis=1, keepdims=True)
        return self.counts / np.maximum(totals, 1)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_fractions()[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(
            np.asarray(d["feature"], dtype=np.intp),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.intp),
            np.asarray(d["right"], dtype=np.intp),
            np.asarray(d["counts"], dtype=np.int64).reshape(len(d["feature"]), -1),
        )


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    classes: list[str]
    importances: np.ndarray
    hyperparams: ForestHyperparams
    feature_count: int
    feature_names: list[str] | None = field(default=None)

    def _check(self, X) -> tuple[np.ndarray, bool]:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.ndim != 2 or X.shape[1] != self.feature_count:
            raise InvalidInputError(f"expected {self.feature_count} features, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("non-finite feature value")
        return np.ascontiguousarray(X), single

    def predict_proba(self, X) -> np.ndarray:
        X, single = self._check(X)
        total = np.zeros((X.shape[0], len(self.classes)))
        for tree in self.trees:
            total += tree.predict_proba(X)
        proba = total / len(self.trees)
        return proba[0] if single else proba

    def predict(self, X) -> list[str]:
        proba = np.atleast_2d(self.predict_proba(X))
        return [self.classes[i] for i in proba.argmax(axis=1)]

    def to_json(self) -> str:
        payload = {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "classes": list(self.classes),
            "feature_count": self.feature_count,
            "feature_names": self.feature_names,
            "hyperparams": asdict(self.hyperparams),
            "importances": [float(v) for v in self.importances],
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(payload, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid model JSON: {exc}") from None
        if d.get("format") != FORMAT or d.get("version") != FORMAT_VERSION:
            raise ParseError("not an ovmorph forest model")
        return cls(
            trees=[DecisionTree.from_dict(t) for t in d["trees"]],
            classes=list(d["classes"]),
            importances=np.asarray(d["importances"], dtype=np.float64),
            hyperparams=ForestHyperparams(**d["hyperparams"]),
            feature_count=int(d["feature_count"]),
            feature_names=d.get("feature_names"),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ForestModel":
        with open(path) as fh:
            return cls.from_json(fh.read())


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


def _grow_tree(X, y, n_classes, hp: ForestHyperparams, mtry: int, tree_index: int):
    """Grow one tree; returns (DecisionTree, per-feature impurity decrease)."""
    n, d = X.shape
    bitgen = rngmod.stream(hp.seed, tree_index)
    if hp.bootstrap:
        root_idx = np.sort(rngmod.integers(bitgen, n, n))
    else:
        root_idx = np.arange(n, dtype=np.intp)
    n_root = len(root_idx)

    feature, threshold, left, right, counts = [], [], [], [], []
    importance = np.zeros(d)

    def new_node(c):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(c)
        return len(feature) - 1

    root = new_node(np.bincount(y[root_idx], minlength=n_classes))
    stack = [(root, root_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        c = counts[node]
        m = len(idx)
        if (
            np.count_nonzero(c) < 2
            or (hp.max_depth is not None and depth >= hp.max_depth)
            or m < 2 * hp.min_samples_leaf
        ):
            continue
        parent_score = float((c.astype(np.int64) ** 2).sum()) / m
        floor = parent_score * (1.0 + _GAIN_EPS)

        sampler = rngmod.PartialShuffle(bitgen, d)
        tried = np.sort(sampler.take(mtry))
        f, thr, score = kernels.best_split(X, y, idx, tried, n_classes, hp.min_samples_leaf)
        # keep drawing features one at a time until a split with positive gain appears
        while (f < 0 or score <= floor) and sampler.remaining:
            extra = sampler.take(1)
            f2, thr2, score2 = kernels.best_split(X, y, idx, extra, n_classes, hp.min_samples_leaf)
            if f2 >= 0 and (score2 > score or (score2 == score and f2 < f)):
                f, thr, score = f2, thr2, score2
        if f < 0 or score <= floor:
            continue

        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        importance[f] += (score - parent_score) / n_root
        feature[node] = f
        threshold[node] = thr
        lnode = new_node(np.bincount(y[li], minlength=n_classes))
        rnode = new_node(np.bincount(y[ri], minlength=n_classes))
        left[node] = lnode
        right[node] = rnode
        stack.append((rnode, ri, depth + 1))
        stack.append((lnode, li, depth + 1))

    tree = DecisionTree(
        np.asarray(feature, dtype=np.intp),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.intp),
        np.asarray(right, dtype=np.intp),
        np.asarray(counts, dtype=np.int64).reshape(len(feature), n_classes),
    )
    return tree, importance


def train_forest(X, y, hp: ForestHyperparams | None = None, workers: int = 1, feature_names=None) -> ForestModel:
    """Fit a forest.  Labels are compared as strings; class order is lexicographic."""
    hp = hp or ForestHyperparams()
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if X.ndim != 2:
        raise InvalidInputError(f"X must be 2-D, got shape {X.shape}")
    n, d = X.shape
    y = [str(v) for v in y]
    if len(y) != n:
        raise InvalidInputError(f"{n} samples but {len(y)} labels")
    if n < 2 or d < 1:
        raise InvalidInputError("need at least 2 samples and 1 feature")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("non-finite feature value")
    classes = sorted(set(y))
    if len(classes) < 2:
        raise DegenerateTrainingError(f"only one class present: {classes}")
    index = {c: i for i, c in enumerate(classes)}
    y_enc = np.array([index[v] for v in y], dtype=np.intp)
    mtry = hp.resolve_mtry(d)

    def build(t):
        return _grow_tree(X, y_enc, len(classes), hp, mtry, t)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(build, range(hp.n_trees)))
    else:
        results = [build(t) for t in range(hp.n_trees)]

    trees = [t for t, _ in results]
    raw = np.zeros(d)
    for _, imp in results:
        raw += imp
    raw /= hp.n_trees
    total = raw.sum()
    importances = raw / total if total > 0 else raw
    names = list(feature_names) if feature_names is not None else None
    return ForestModel(trees, classes, importances, hp, d, names)


def predict_proba(model: ForestModel, x) -> np.ndarray:
    return model.predict_proba(x)


def feature_importance(model: ForestModel) -> np.ndarray:
    return model.importances.copy()
