"""Classification metrics and the cross-validation driver.

AUC uses the Mann-Whitney form with ties counted one half; it is computed
from integer pair counts so fixtures such as ``[0.1, 0.4, 0.35, 0.8]`` vs
``[0, 0, 1, 1]`` give exactly 0.75.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .errors import FoldDegenerateError, InvalidInputError, UndefinedMetricError
from .feature_io import GENES, MUTANT, Dataset, SplitPlan, standardize_fit
from .forest import ForestHyperparams, train_forest

log = logging.getLogger(__name__)

METRICS = ("auc", "accuracy", "f1_macro", "sensitivity", "specificity")
UNITS = ("patch", "case")


# -- ranking metrics ---------------------------------------------------------


def _binary(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.dtype.kind in "biuf":
        return arr.astype(bool)
    raise InvalidInputError("binary labels must be bool or 0/1")


def _pair_counts(scores: np.ndarray, positive: np.ndarray) -> tuple[int, int, int]:
    """(2 * wins-with-half-ties, n_pos, n_neg)."""
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    pos = positive[order]
    starts = np.r_[0, np.flatnonzero(np.diff(s)) + 1]
    pos_in = np.add.reduceat(pos.astype(np.int64), starts)
    size = np.diff(np.r_[starts, len(s)])
    neg_in = size - pos_in
    neg_below = np.r_[0, np.cumsum(neg_in)[:-1]]
    twice = int((2 * pos_in * neg_below + pos_in * neg_in).sum())
    return twice, int(pos.sum()), int((~pos).sum())


def roc_auc(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    positive = _binary(labels)
    if scores.shape != positive.shape or scores.ndim != 1:
        raise InvalidInputError("scores and labels must be 1-D and equally long")
    twice, n_pos, n_neg = _pair_counts(scores, positive)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative samples")
    return twice / (2 * n_pos * n_neg)


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds); one point per distinct score plus the (0, 0) origin at +inf."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = _binary(labels)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC curve needs both classes")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = positive[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(p)[last]
    fps = (last + 1) - tps
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    thr = np.r_[np.inf, s[last]]
    return fpr, tpr, thr


def macro_auc_ovr(proba, labels: Sequence[str], classes: Sequence[str]) -> tuple[float, dict[str, float]]:
    """Unweighted mean of one-vs-rest AUCs over classes with both outcomes present."""
    proba = np.asarray(proba, dtype=np.float64)
    labels = np.asarray(labels)
    per_class = {}
    for j, c in enumerate(classes):
        pos = labels == c
        if pos.all() or not pos.any():
            continue
        per_class[c] = roc_auc(proba[:, j], pos)
    if not per_class:
        raise UndefinedMetricError("no class has both positive and negative samples")
    return float(np.mean(list(per_class.values()))), per_class


# -- confusion-based metrics -------------------------------------------------


@dataclass
class ConfusionMatrix:
    classes: list[str]
    counts: np.ndarray  # rows = true, columns = predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.classes != other.classes:
            raise InvalidInputError("cannot add confusion matrices over different classes")
        return ConfusionMatrix(self.classes, self.counts + other.counts)


@dataclass
class Rates:
    accuracy: float
    f1: dict[str, float]
    f1_macro: float
    sensitivity: float | None = None
    specificity: float | None = None
    zero_support: list[str] = field(default_factory=list)


def confusion_matrix(preds, labels, classes: Sequence[str] | None = None) -> ConfusionMatrix:
    preds = [str(p) for p in preds]
    labels = [str(t) for t in labels]
    if len(preds) != len(labels):
        raise InvalidInputError(f"{len(preds)} predictions but {len(labels)} labels")
    if not labels:
        raise InvalidInputError("no samples")
    classes = list(classes) if classes is not None else sorted(set(labels) | set(preds))
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(labels, preds):
        if t not in index or p not in index:
            raise InvalidInputError(f"label {t!r} or prediction {p!r} outside classes {classes}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(classes, counts)


def binary_rates(tp: int, fn: int, fp: int, tn: int) -> tuple[float, float]:
    """(sensitivity, specificity)."""
    sens = tp / (tp + fn) if tp + fn else float("nan")
    spec = tn / (tn + fp) if tn + fp else float("nan")
    return sens, spec


def rates_from_confusion(cm: ConfusionMatrix, positive_class: str | None = None) -> Rates:
    counts = cm.counts
    total = counts.sum()
    tp_all = np.diag(counts)
    f1 = {}
    zero_support = []
    for i, c in enumerate(cm.classes):
        support = counts[i].sum()
        predicted = counts[:, i].sum()
        if support == 0:
            zero_support.append(c)
            f1[c] = 0.0
            continue
        denom = support + predicted
        f1[c] = 2 * tp_all[i] / denom if denom else 0.0
    if zero_support:
        warnings.warn(f"classes with zero support contribute F1 = 0: {zero_support}", stacklevel=2)
    rates = Rates(
        accuracy=float(tp_all.sum() / total),
        f1={c: float(v) for c, v in f1.items()},
        f1_macro=float(np.mean(list(f1.values()))),
        zero_support=zero_support,
    )
    if positive_class is not None:
        k = cm.classes.index(positive_class)
        tp = int(counts[k, k])
        fn = int(counts[k].sum() - tp)
        fp = int(counts[:, k].sum() - tp)
        tn = int(total - tp - fn - fp)
        rates.sensitivity, rates.specificity = binary_rates(tp, fn, fp, tn)
    return rates


def confusion_and_rates(preds, labels, positive_class: str | None = None, classes=None):
    cm = confusion_matrix(preds, labels, classes)
    if positive_class is not None and positive_class not in cm.classes:
        raise InvalidInputError(f"positive class {positive_class!r} not among {cm.classes}")
    return cm, rates_from_confusion(cm, positive_class)


# -- cross-validation --------------------------------------------------------


@dataclass
class FoldMetrics:
    fold: int
    n_test: int
    auc: float
    accuracy: float
    f1_macro: float
    sensitivity: float | None
    specificity: float | None
    confusion: ConfusionMatrix

    def value(self, metric: str):
        return getattr(self, metric)


@dataclass
class CvReport:
    target: str
    unit: str
    classes: list[str]
    positive_class: str | None
    per_fold: list[FoldMetrics]
    plan: SplitPlan

    def values(self, metric: str) -> list[float]:
        return [np.nan if f.value(metric) is None else f.value(metric) for f in self.per_fold]

    def mean(self, metric: str) -> float:
        v = np.asarray(self.values(metric), dtype=float)
        return float(np.mean(v)) if np.all(np.isfinite(v)) else float("nan")

    def std(self, metric: str) -> float:
        v = np.asarray(self.values(metric), dtype=float)
        if len(v) < 2 or not np.all(np.isfinite(v)):
            return float("nan")
        return float(np.std(v, ddof=1))

    @property
    def confusion(self) -> ConfusionMatrix:
        total = self.per_fold[0].confusion
        for f in self.per_fold[1:]:
            total = total + f.confusion
        return total


@dataclass
class OutOfFold:
    ids: list[str]
    labels: list[str]
    proba: np.ndarray
    folds: list[int]


@dataclass
class CvResult:
    target: str
    classes: list[str]
    positive_class: str | None
    plan: SplitPlan
    hyperparams: ForestHyperparams
    standardize: bool
    reports: dict[str, CvReport]
    oof: dict[str, OutOfFold]
    fold_members: list[dict]

    @property
    def patch(self) -> CvReport:
        return self.reports["patch"]

    @property
    def case(self) -> CvReport:
        return self.reports["case"]


def default_positive_class(target: str, classes: Sequence[str]) -> str | None:
    if target in GENES and MUTANT in classes:
        return MUTANT
    return None


def _score(proba, labels, classes, positive_class):
    labels = list(labels)
    if positive_class is not None:
        k = classes.index(positive_class)
        pos = np.array([lab == positive_class for lab in labels])
        try:
            auc = roc_auc(proba[:, k], pos)
        except UndefinedMetricError:
            auc = float("nan")
    else:
        try:
            auc, _ = macro_auc_ovr(proba, labels, classes)
        except UndefinedMetricError:
            auc = float("nan")
    preds = [classes[i] for i in np.argmax(proba, axis=1)]
    cm = confusion_matrix(preds, labels, classes)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rates = rates_from_confusion(cm, positive_class)
    return auc, rates, cm


def _case_level(case_ids, proba, labels):
    order: dict[str, list[int]] = {}
    for i, c in enumerate(case_ids):
        order.setdefault(c, []).append(i)
    cases = sorted(order)
    cproba = np.array([proba[order[c]].mean(axis=0) for c in cases])
    clabels = [labels[order[c][0]] for c in cases]
    return cases, cproba, clabels


def run_cv(
    dataset: Dataset,
    target: str,
    hp: ForestHyperparams,
    split: SplitPlan,
    standardize: bool = False,
    workers: int = 1,
    positive_class: str | None = None,
) -> CvResult:
    """k-fold CV of a forest on ``dataset`` for one target, at patch and case level.

    Forest seeds differ per fold (derived from ``hp.seed`` and the fold index).
    """
    data = dataset.labeled(target)
    if len(data) == 0:
        raise InvalidInputError(f"no samples labeled for target {target!r}")
    missing = {s.case_id for s in data.samples} - set(split.assignments)
    if missing:
        raise InvalidInputError(f"{len(missing)} cases missing from the split plan, e.g. {sorted(missing)[:3]}")
    X = data.X
    labels = [str(v) for v in data.labels(target)]
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise FoldDegenerateError(-1, f"target {target!r} has a single class")
    positive_class = positive_class or default_positive_class(target, classes)
    case_ids = data.case_ids
    fold_of = np.array([split.fold_of(c) for c in case_ids])

    proba_all = np.zeros((len(data), len(classes)))
    per_unit: dict[str, list[FoldMetrics]] = {u: [] for u in UNITS}
    members = []
    for fold in range(split.k):
        test = np.flatnonzero(fold_of == fold)
        train = np.flatnonzero(fold_of != fold)
        train_classes = {labels[i] for i in train}
        if len(train_classes) < 2:
            raise FoldDegenerateError(fold, f"training labels contain a single class {sorted(train_classes)}")
        if len(test) == 0:
            raise FoldDegenerateError(fold, "empty test fold")
        Xtr, Xte = X[train], X[test]
        if standardize:
            transform = standardize_fit(Xtr)
            Xtr, Xte = transform.apply(Xtr), transform.apply(Xte)
        fold_hp = replace(hp, seed=rngmod.derive_seed(hp.seed, fold))
        model = train_forest(Xtr, [labels[i] for i in train], fold_hp, workers=workers)
        # a training fold can miss a class that exists elsewhere; pad its column
        p = model.predict_proba(Xte)
        proba = np.zeros((len(test), len(classes)))
        for j, c in enumerate(model.classes):
            proba[:, classes.index(c)] = p[:, j]
        proba_all[test] = proba
        test_labels = [labels[i] for i in test]

        auc, rates, cm = _score(proba, test_labels, classes, positive_class)
        per_unit["patch"].append(
            FoldMetrics(fold, len(test), auc, rates.accuracy, rates.f1_macro, rates.sensitivity, rates.specificity, cm)
        )
        cases, cproba, clabels = _case_level([case_ids[i] for i in test], proba, test_labels)
        auc, rates, cm = _score(cproba, clabels, classes, positive_class)
        per_unit["case"].append(
            FoldMetrics(fold, len(cases), auc, rates.accuracy, rates.f1_macro, rates.sensitivity, rates.specificity, cm)
        )
        members.append({"fold": fold, "cases": cases, "test_patches": sorted(data.patch_ids[i] for i in test)})
        log.info("fold %d: %d train / %d test patches", fold, len(train), len(test))

    cases, cproba, clabels = _case_level(case_ids, proba_all, labels)
    oof = {
        "patch": OutOfFold(data.patch_ids, labels, proba_all, fold_of.tolist()),
        "case": OutOfFold(cases, clabels, cproba, [split.fold_of(c) for c in cases]),
    }
    reports = {u: CvReport(target, u, classes, positive_class, per_unit[u], split) for u in UNITS}
    return CvResult(target, classes, positive_class, split, hp, standardize, reports, oof, members)


# -- report output -----------------------------------------------------------


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if np.isfinite(x) else None


def report_dict(result: CvResult) -> dict:
    units = {}
    for unit, rep in result.reports.items():
        units[unit] = {
            "per_fold": [
                {
                    "fold": f.fold,
                    "n_test": f.n_test,
                    **{m: _num(f.value(m)) for m in METRICS},
                    "confusion": f.confusion.counts.tolist(),
                }
                for f in rep.per_fold
            ],
            "summary": {m: {"mean": _num(rep.mean(m)), "std": _num(rep.std(m))} for m in METRICS},
            "confusion": rep.confusion.counts.tolist(),
        }
    return {
        "target": result.target,
        "classes": result.classes,
        "positive_class": result.positive_class,
        "k": result.plan.k,
        "split_seed": result.plan.seed,
        "standardize": result.standardize,
        "hyperparams": asdict(result.hyperparams),
        "units": units,
        "folds": result.fold_members,
    }


def write_cv_outputs(result: CvResult, out_dir, summary_rows: list | None = None) -> None:
    """Write ``report_<target>.json``, ``roc_points_<target>.csv`` and ``confusion_<target>.csv``.

    Summary rows for ``cv_summary.csv`` are appended to ``summary_rows`` when given.
    """
    os.makedirs(out_dir, exist_ok=True)
    t = result.target
    with open(os.path.join(out_dir, f"report_{t}.json"), "w") as fh:
        json.dump(report_dict(result), fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(os.path.join(out_dir, f"roc_points_{t}.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit", "class", "fpr", "tpr", "threshold"])
        for unit, oof in result.oof.items():
            targets = [result.positive_class] if result.positive_class else result.classes
            for c in targets:
                pos = np.array([lab == c for lab in oof.labels])
                if pos.all() or not pos.any():
                    continue
                fpr, tpr, thr = roc_curve(oof.proba[:, result.classes.index(c)], pos)
                for a, b, th in zip(fpr, tpr, thr):
                    w.writerow([unit, c, repr(float(a)), repr(float(b)), repr(float(th))])

    with open(os.path.join(out_dir, f"confusion_{t}.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit", "true"] + result.classes)
        for unit, rep in result.reports.items():
            for c, row in zip(result.classes, rep.confusion.counts):
                w.writerow([unit, c] + [int(v) for v in row])

    if summary_rows is not None:
        for unit, rep in result.reports.items():
            for m in METRICS:
                vals = rep.values(m)
                summary_rows.append(
                    [t, unit, m, _fmt(rep.mean(m)), _fmt(rep.std(m))] + [_fmt(v) for v in vals]
                )


def _fmt(x) -> str:
    x = float(x)
    return repr(x) if np.isfinite(x) else ""


def write_cv_summary(path, rows: list, k: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target", "unit", "metric", "mean", "std"] + [f"fold_{i}" for i in range(k)])
        w.writerows(rows)
