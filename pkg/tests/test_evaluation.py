import csv
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ovmorph import evaluation as ev
from ovmorph import feature_io as fio
from ovmorph.errors import FoldDegenerateError, InvalidInputError, UndefinedMetricError
from ovmorph.forest import ForestHyperparams


def pairwise_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_auc_examples():
    assert ev.roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert ev.roc_auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert ev.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    with pytest.raises(UndefinedMetricError):
        ev.roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(InvalidInputError):
        ev.roc_auc([0.1, 0.2], ["a", "b"])


scores_labels = st.integers(2, 40).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 6).map(lambda v: v / 4), min_size=n, max_size=n),
        st.lists(st.booleans(), min_size=n, max_size=n),
    )
).filter(lambda t: any(t[1]) and not all(t[1]))


@settings(max_examples=150, deadline=None)
@given(scores_labels)
def test_auc_matches_pairwise_oracle(data):
    scores, labels = data
    auc = ev.roc_auc(scores, labels)
    assert auc == pytest.approx(pairwise_auc(scores, labels), abs=1e-15)
    flipped = ev.roc_auc(scores, [not l for l in labels])
    assert auc + flipped == pytest.approx(1.0, abs=1e-15)
    assert ev.roc_auc(np.exp(np.asarray(scores)) * 3 - 1, labels) == auc


def test_roc_curve_points():
    fpr, tpr, thr = ev.roc_curve([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert fpr.tolist() == [0.0, 0.0, 0.5, 0.5, 1.0]
    assert tpr.tolist() == [0.0, 0.5, 0.5, 1.0, 1.0]
    assert thr[0] == np.inf and thr[1:].tolist() == [0.8, 0.4, 0.35, 0.1]
    fpr, tpr, thr = ev.roc_curve([0.5, 0.5, 0.5], [1, 0, 1])
    assert len(thr) == 2 and (fpr[-1], tpr[-1]) == (1.0, 1.0)


def test_macro_auc():
    classes = ["a", "b", "c"]
    proba = np.eye(3)[[0, 1, 2, 0]]
    auc, per = ev.macro_auc_ovr(proba, ["a", "b", "c", "a"], classes)
    assert auc == 1.0 and set(per) == set(classes)
    auc, per = ev.macro_auc_ovr(proba[:2], ["a", "b"], classes)
    assert set(per) == {"a", "b"}


def test_fixture_rates():
    sens, spec = ev.binary_rates(52, 17, 10, 52)
    assert f"{100 * sens:.1f}" == "75.4"
    assert f"{100 * spec:.1f}" == "83.9"


def test_confusion_perfect_and_degenerate():
    cm, r = ev.confusion_and_rates(["a", "b", "a"], ["a", "b", "a"])
    assert cm.counts.tolist() == [[2, 0], [0, 1]]
    assert (r.accuracy, r.f1_macro) == (1.0, 1.0)
    cm, r = ev.confusion_and_rates(["p"] * 4, ["p", "n", "p", "n"], positive_class="p", classes=["n", "p"])
    assert (r.sensitivity, r.specificity) == (1.0, 0.0)
    assert cm.total == 4
    assert r.accuracy == np.trace(cm.counts) / cm.total


def test_zero_support_f1_warns():
    with pytest.warns(UserWarning):
        _, r = ev.confusion_and_rates(["a", "b"], ["a", "a"], classes=["a", "b", "c"])
    assert r.f1["c"] == 0.0 and r.f1["b"] == 0.0
    assert "c" in r.zero_support


def test_confusion_errors():
    with pytest.raises(InvalidInputError):
        ev.confusion_matrix(["a"], ["a", "b"])
    with pytest.raises(InvalidInputError):
        ev.confusion_and_rates(["a"], ["a"], positive_class="z")


def toy_dataset(n_cases, patches=1, seed=0, sep=3.0, target="tp53"):
    gen = np.random.default_rng(seed)
    samples = []
    for c in range(n_cases):
        lab = "mutant" if c % 2 else "wildtype"
        for p in range(patches):
            x = gen.normal(size=4)
            x[0] += sep * (c % 2)
            samples.append(fio.FusedSample(f"c{c}_p{p}", f"c{c}", x, "serous", {target: lab}))
    return fio.Dataset(samples, ["a", "b", "c", "d"])


def run(ds, k=5, seed=0, **kw):
    plan = fio.make_stratified_folds(ds.samples, k, lambda s: s.label("tp53"), seed)
    return ev.run_cv(ds, "tp53", ForestHyperparams(n_trees=20, seed=seed), plan, **kw)


def test_cv_accounting():
    ds = toy_dataset(10, patches=2)
    res = run(ds)
    assert len(res.patch.per_fold) == len(res.case.per_fold) == 5
    assert sum(f.n_test for f in res.patch.per_fold) == 20
    assert sum(f.n_test for f in res.case.per_fold) == 10
    tested = [c for m in res.fold_members for c in m["cases"]]
    assert sorted(tested) == sorted({s.case_id for s in ds.samples})
    assert res.patch.confusion.total == 20
    assert res.positive_class == "mutant"


def test_cv_std_is_sample_std():
    res = run(toy_dataset(30, sep=0.5))
    vals = res.patch.values("auc")
    assert res.patch.std("auc") == pytest.approx(np.std(vals, ddof=1), abs=1e-15)


def test_cv_standardize_same_ranking():
    # a forest only sees value order, so per-fold standardization cannot change it
    ds = toy_dataset(20)
    a, b = run(ds), run(ds, standardize=True)
    assert np.array_equal(a.oof["patch"].proba, b.oof["patch"].proba)


def test_cv_single_class_training_fold():
    samples = [fio.FusedSample(f"p{i}", f"c{i}", np.array([float(i)]), None, {"tp53": "mutant" if i == 0 else "wildtype"}) for i in range(4)]
    ds = fio.Dataset(samples, ["x"])
    plan = fio.SplitPlan(2, {"c0": 0, "c1": 1, "c2": 1, "c3": 1})
    with pytest.raises(FoldDegenerateError):
        ev.run_cv(ds, "tp53", ForestHyperparams(n_trees=3), plan)


def test_cv_multiclass_subtype():
    gen = np.random.default_rng(0)
    subtypes = ["serous", "mucinous", "clearcell"]
    samples = []
    for c in range(30):
        st_ = subtypes[c % 3]
        x = gen.normal(size=3)
        x[c % 3] += 4
        samples.append(fio.FusedSample(f"p{c}", f"c{c}", x, st_, {}))
    ds = fio.Dataset(samples, ["a", "b", "c"])
    plan = fio.make_stratified_folds(samples, 5, lambda s: s.label("subtype"), 1)
    res = ev.run_cv(ds, "subtype", ForestHyperparams(n_trees=20), plan)
    assert res.positive_class is None
    assert res.patch.mean("auc") >= 0.9
    assert res.patch.per_fold[0].sensitivity is None


def test_cv_outputs(tmp_path):
    res = run(toy_dataset(20, patches=2))
    rows = []
    ev.write_cv_outputs(res, tmp_path, rows)
    ev.write_cv_summary(tmp_path / "cv_summary.csv", rows, 5)
    report = json.loads((tmp_path / "report_tp53.json").read_text())
    assert report["k"] == 5 and set(report["units"]) == {"patch", "case"}
    assert report["units"]["patch"]["summary"]["auc"]["mean"] == res.patch.mean("auc")
    with open(tmp_path / "roc_points_tp53.csv") as fh:
        roc = list(csv.DictReader(fh))
    assert set(roc[0]) == {"unit", "class", "fpr", "tpr", "threshold"}
    with open(tmp_path / "cv_summary.csv") as fh:
        summary = list(csv.reader(fh))
    assert summary[0][:5] == ["target", "unit", "metric", "mean", "std"]
    assert len(summary) == 1 + 2 * len(ev.METRICS)
    with open(tmp_path / "confusion_tp53.csv") as fh:
        conf = list(csv.reader(fh))
    assert conf[0] == ["unit", "true", "mutant", "wildtype"]
