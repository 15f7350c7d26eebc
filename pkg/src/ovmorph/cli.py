"""``ovmorph`` command-line entry point.

Exit codes: 0 success, 1 validation error, 2 data error, 3 degenerate
training or metric.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__, analysis, config, evaluation, feature_io, morphometry
from .errors import DataError, InsufficientTissueError, InvalidInputError, OvmorphError, ValidationError
from .fixtures import CohortSpec, generate_cohort
from .forest import ForestHyperparams, ForestModel, train_forest
from .imageio import read_pgm, read_ppm, write_ppm
from .stain_norm import MacenkoParams, load_reference, normalize_to_reference

log = logging.getLogger("ovmorph")

COMMANDS = ("normalize", "features", "aggregate", "fuse", "train", "cv", "predict", "analyze", "fixtures")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", help="JSON config file")
    g.add_argument("--workers", type=int, help="worker threads (run.workers)")
    g.add_argument("--seed", help="master seed (run.seed)")
    g.add_argument("--out", help="output directory (paths.out)")
    g.add_argument("-v", "--verbose", action="store_true")
    keys = common.add_argument_group("config keys")
    for section, body in config.SCHEMA.items():
        for key in body:
            keys.add_argument(f"--{section}.{key}", dest=f"cfg:{section}.{key}", metavar="VALUE")

    parser = _Parser(prog="ovmorph", description="Nuclear morphometry and mutation-inference pipeline.")
    parser.add_argument("--version", action="version", version=f"ovmorph {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "normalize": "stain-normalize every manifest patch",
        "features": "per-nucleus and per-patch morphometric features",
        "aggregate": "patch features from an existing per-nucleus CSV",
        "fuse": "join patch features, embeddings and labels into fused.csv",
        "train": "fit one forest per target on all labeled patches",
        "cv": "grouped stratified cross-validation per policy and target",
        "predict": "apply trained forests to the manifest patches",
        "analyze": "correlation, PCA, subtype heatmap and importances",
        "fixtures": "generate the synthetic cohort and a matching config",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve_config(args) -> dict:
    cfg = config.load(args.config)
    for attr, value in sorted(vars(args).items()):
        if attr.startswith("cfg:") and value is not None:
            dotted = attr[4:]
            if dotted.startswith("paths."):
                value = os.path.abspath(value)
            config.override(cfg, dotted, value)
    if args.workers is not None:
        config.override(cfg, "run.workers", args.workers)
    if args.seed is not None:
        config.override(cfg, "run.seed", args.seed)
    if args.out is not None:
        cfg["paths"]["out"] = os.path.abspath(args.out)
    return config.validate(cfg)


# -- helpers -----------------------------------------------------------------


def _out(cfg, *parts) -> str:
    path = os.path.join(cfg["paths"]["out"], *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def _pmap(cfg, fn, items):
    """Order-preserving map over a thread pool; results never depend on worker count."""
    workers = cfg["run"]["workers"]
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _macenko(cfg) -> MacenkoParams:
    s = cfg["stain"]
    return MacenkoParams(s["background_intensity"], s["od_threshold"], s["angle_percentile"], s["min_tissue_pixels"])


def _reference(cfg):
    return load_reference(cfg["paths"]["reference"])


def _filters(cfg) -> morphometry.MorphometryFilters:
    m = cfg["morphometry"]
    return morphometry.MorphometryFilters(m["min_area"], m["exclude_border"])


def _hyperparams(cfg, seed=None) -> ForestHyperparams:
    f = cfg["forest"]
    return ForestHyperparams(
        n_trees=f["n_trees"],
        max_depth=f["max_depth"],
        min_samples_leaf=f["min_samples_leaf"],
        mtry=f["mtry"],
        bootstrap=f["bootstrap"],
        seed=cfg["run"]["seed"] if seed is None else seed,
    )


def _check_error_rate(cfg, n_errors: int, n_rows: int, what: str) -> None:
    if n_rows and n_errors / n_rows > cfg["run"]["max_error_rate"]:
        raise DataError(
            f"{n_errors}/{n_rows} {what} failed, above run.max_error_rate={cfg['run']['max_error_rate']}"
        )


def _write_skips(path, skips) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patch_id", "kind", "reason"])
        w.writerows(skips)


def _patch_features_path(cfg) -> str:
    return os.path.join(cfg["paths"]["out"], "patch_features.csv")


def _load_patch_vectors(cfg):
    path = _patch_features_path(cfg)
    if not os.path.exists(path):
        raise ValidationError(f"{path} not found; run `ovmorph features` first")
    return morphometry.read_patch_csv(path)


def _embeddings(cfg, policy):
    if policy == "morphometric-only":
        return None
    config.require_paths(cfg, "embeddings")
    return feature_io.load_embeddings(cfg["paths"]["embeddings"])


def _dataset(cfg, policy) -> feature_io.Dataset:
    config.require_paths(cfg, "manifest", "labels")
    manifest = feature_io.load_manifest(cfg["paths"]["manifest"])
    labels = feature_io.load_labels(cfg["paths"]["labels"])
    return feature_io.build_dataset(_load_patch_vectors(cfg), manifest, labels, _embeddings(cfg, policy), policy)


# -- commands ----------------------------------------------------------------


def cmd_normalize(cfg) -> int:
    config.require_paths(cfg, "manifest")
    rows = feature_io.load_manifest(cfg["paths"]["manifest"])
    reference = _reference(cfg)
    params = _macenko(cfg)
    out_dir = os.path.join(cfg["paths"]["out"], "normalized")
    os.makedirs(out_dir, exist_ok=True)

    def work(row):
        if not row.mask_path or not os.path.exists(row.mask_path):
            return row, None, ("error", f"mask not found: {row.mask_path}")
        try:
            image = read_ppm(row.image_path)
            out = normalize_to_reference(image, reference, params)
        except (DataError, OSError) as exc:
            kind = "skipped" if isinstance(exc, InsufficientTissueError) else "error"
            return row, None, (kind, str(exc))
        path = os.path.join(out_dir, f"{row.patch_id}.ppm")
        write_ppm(path, out)
        return row, path, None

    results = _pmap(cfg, work, rows)
    kept, skips = [], []
    for row, path, problem in results:
        if problem is None:
            kept.append(feature_io.ManifestRow(row.patch_id, row.case_id, path, row.mask_path))
        else:
            skips.append([row.patch_id, *problem])
    feature_io.write_manifest(os.path.join(cfg["paths"]["out"], "normalized_manifest.csv"), kept)
    _write_skips(os.path.join(cfg["paths"]["out"], "skipped.csv"), skips)
    n_err = sum(1 for s in skips if s[1] == "error")
    log.info("normalized %d patches, %d skipped, %d errors", len(kept), len(skips) - n_err, n_err)
    _check_error_rate(cfg, n_err, len(rows), "patches")
    return 0


def cmd_features(cfg) -> int:
    config.require_paths(cfg, "manifest")
    rows = feature_io.load_manifest(cfg["paths"]["manifest"])
    filters = _filters(cfg)
    do_norm = cfg["morphometry"]["normalize"]
    reference = _reference(cfg) if do_norm else None
    params = _macenko(cfg)

    def work(row):
        try:
            image = read_ppm(row.image_path)
            mask = read_pgm(row.mask_path)
            if do_norm:
                image = normalize_to_reference(image, reference, params)
            nuclei, vec = morphometry.measure_patch(image, mask, row.patch_id, filters)
        except (DataError, OSError) as exc:
            kind = "skipped" if isinstance(exc, InsufficientTissueError) else "error"
            return row, None, None, (kind, str(exc))
        return row, nuclei, vec, None

    results = _pmap(cfg, work, rows)
    nucleus_rows, vectors, skips = [], [], []
    for row, nuclei, vec, problem in results:
        if problem is not None:
            skips.append([row.patch_id, *problem])
            continue
        nucleus_rows.extend((row.patch_id, label, f) for label, f in nuclei)
        vectors.append(vec)
    morphometry.write_nucleus_csv(_out(cfg, "nucleus_features.csv"), nucleus_rows)
    morphometry.write_patch_csv(_patch_features_path(cfg), vectors)
    _write_skips(_out(cfg, "features_skipped.csv"), skips)
    n_err = sum(1 for s in skips if s[1] == "error")
    log.info("measured %d nuclei in %d patches", len(nucleus_rows), len(vectors))
    _check_error_rate(cfg, n_err, len(rows), "patches")
    return 0


def cmd_aggregate(cfg) -> int:
    config.require_paths(cfg, "manifest")
    src = os.path.join(cfg["paths"]["out"], "nucleus_features.csv")
    if not os.path.exists(src):
        raise ValidationError(f"{src} not found; run `ovmorph features` first")
    by_patch: dict[str, list] = {}
    for pid, _, feats in morphometry.read_nucleus_csv(src):
        by_patch.setdefault(pid, []).append(feats)
    rows = feature_io.load_manifest(cfg["paths"]["manifest"])
    known = {r.patch_id for r in rows}
    stray = sorted(set(by_patch) - known)
    if stray:
        raise InvalidInputError(f"{len(stray)} nucleus rows belong to patches missing from the manifest, e.g. {stray[0]!r}")
    vectors = [morphometry.aggregate_patch(by_patch.get(r.patch_id, []), r.patch_id) for r in rows]
    morphometry.write_patch_csv(_patch_features_path(cfg), vectors)
    return 0


def cmd_fuse(cfg) -> int:
    ds = _dataset(cfg, cfg["fusion"]["policy"])
    feature_io.write_fused_csv(_out(cfg, "fused.csv"), ds)
    log.info("fused %d samples x %d features", len(ds), len(ds.feature_names))
    return 0


def _standardizer_path(model_path: str) -> str:
    return model_path[: -len(".json")] + ".standardizer.json"


def cmd_train(cfg) -> int:
    policy = cfg["fusion"]["policy"]
    ds = _dataset(cfg, policy)
    for target in cfg["cv"]["targets"]:
        data = ds.labeled(target)
        if len(data) == 0:
            raise InvalidInputError(f"no samples labeled for target {target!r}")
        X = data.X
        path = _out(cfg, "models", f"model_{target}.json")
        if cfg["fusion"]["standardize"]:
            transform = feature_io.standardize_fit(X)
            X = transform.apply(X)
            with open(_standardizer_path(path), "w") as fh:
                json.dump({"mean": transform.mean.tolist(), "std": transform.std.tolist()}, fh)
                fh.write("\n")
        model = train_forest(X, data.labels(target), _hyperparams(cfg), cfg["run"]["workers"], ds.feature_names)
        model.save(path)
        log.info("trained %s on %d patches (%s)", target, len(data), policy)
    return 0


def _filter_units(result: evaluation.CvResult, unit: str) -> evaluation.CvResult:
    if unit == "both":
        return result
    return replace(result, reports={unit: result.reports[unit]}, oof={unit: result.oof[unit]})


def cmd_cv(cfg) -> int:
    c = cfg["cv"]
    for policy in c["policies"]:
        ds = _dataset(cfg, policy)
        out_dir = os.path.join(cfg["paths"]["out"], "cv", policy)
        os.makedirs(out_dir, exist_ok=True)
        summary: list = []
        for target in c["targets"]:
            data = ds.labeled(target)
            plan = feature_io.make_stratified_folds(data.samples, c["k"], lambda s: s.label(target), cfg["run"]["seed"], strict=c["strict"])
            result = evaluation.run_cv(
                ds, target, _hyperparams(cfg), plan, standardize=cfg["fusion"]["standardize"], workers=cfg["run"]["workers"]
            )
            evaluation.write_cv_outputs(_filter_units(result, cfg["evaluation"]["unit"]), out_dir, summary)
            for unit, rep in result.reports.items():
                log.info("%s %s %s auc %.3f +- %.3f", policy, target, unit, rep.mean("auc"), rep.std("auc"))
        evaluation.write_cv_summary(os.path.join(out_dir, "cv_summary.csv"), summary, c["k"])
    return 0


def cmd_predict(cfg) -> int:
    config.require_paths(cfg, "manifest")
    policy = cfg["fusion"]["policy"]
    emb = _embeddings(cfg, policy)
    case_of = {r.patch_id: r.case_id for r in feature_io.load_manifest(cfg["paths"]["manifest"])}
    vectors = [v for v in _load_patch_vectors(cfg) if not v.empty]
    ids = [v.patch_id for v in vectors]
    X = np.array([feature_io.fuse(v, emb, policy) for v in vectors]) if vectors else np.zeros((0, 0))
    for target in cfg["cv"]["targets"]:
        path = os.path.join(cfg["paths"]["out"], "models", f"model_{target}.json")
        if not os.path.exists(path):
            raise ValidationError(f"{path} not found; run `ovmorph train` first")
        model = ForestModel.load(path)
        Xt = X
        if os.path.exists(_standardizer_path(path)):
            with open(_standardizer_path(path)) as fh:
                d = json.load(fh)
            Xt = feature_io.Standardizer(np.asarray(d["mean"]), np.asarray(d["std"])).apply(X)
        proba = model.predict_proba(Xt) if len(ids) else np.zeros((0, len(model.classes)))
        with open(_out(cfg, f"predictions_{target}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["patch_id", "case_id", "predicted"] + [f"p_{c}" for c in model.classes])
            for pid, p in zip(ids, proba):
                w.writerow([pid, case_of.get(pid, ""), model.classes[int(np.argmax(p))]] + [repr(float(v)) for v in p])
    return 0


def cmd_analyze(cfg) -> int:
    out = cfg["paths"]["out"]
    nuc_path = os.path.join(out, "nucleus_features.csv")
    if not os.path.exists(nuc_path):
        raise ValidationError(f"{nuc_path} not found; run `ovmorph features` first")
    nuclei = morphometry.read_nucleus_csv(nuc_path)
    if len(nuclei) < 2:
        raise InvalidInputError("correlation analysis needs at least 2 nuclei")
    Xn = np.array([f.as_array() for _, _, f in nuclei])
    analysis.write_correlation_csv(_out(cfg, "correlation_matrix.csv"), analysis.pearson_matrix(Xn, morphometry.FEATURE_NAMES))

    morph = _dataset(cfg, "morphometric-only")
    subtyped = morph.labeled("subtype")
    a = cfg["analysis"]
    n_comp = min(a["n_components"], subtyped.X.shape[1], max(len(subtyped) - 1, 1))
    pca = analysis.pca_fit(subtyped.X, n_comp, standardize=a["standardize"])
    analysis.write_pca_csvs(
        _out(cfg, "pca_projections.csv"), _out(cfg, "pca_variance.csv"), pca, subtyped.patch_ids, subtyped.labels("subtype")
    )
    mean_cols = [morph.feature_names.index(f"{f}_mean") for f in morphometry.FEATURE_NAMES]
    Xm = subtyped.X[:, mean_cols]
    subtypes = subtyped.labels("subtype")
    analysis.write_heatmap_csv(
        _out(cfg, "subtype_heatmap.csv"), analysis.subtype_feature_heatmap(Xm, subtypes, morphometry.FEATURE_NAMES)
    )
    groups, pb = analysis.point_biserial(Xm, subtypes)
    analysis.write_point_biserial_csv(_out(cfg, "subtype_point_biserial.csv"), groups, morphometry.FEATURE_NAMES, pb)

    fused = _dataset(cfg, cfg["fusion"]["policy"])
    for target in cfg["cv"]["targets"]:
        path = os.path.join(out, "models", f"model_{target}.json")
        if os.path.exists(path):
            model = ForestModel.load(path)
            names = model.feature_names or [f"f{i}" for i in range(model.feature_count)]
        else:
            data = fused.labeled(target)
            model = train_forest(data.X, data.labels(target), _hyperparams(cfg), cfg["run"]["workers"], fused.feature_names)
            names = fused.feature_names
        table = analysis.importance_table(names, model.importances)
        analysis.write_importance_csv(_out(cfg, f"feature_importance_{target}.csv"), table)
    return 0


def cmd_fixtures(cfg) -> int:
    f = cfg["fixtures"]
    out = cfg["paths"]["out"]
    spec = CohortSpec(
        n_cases=f["n_cases"],
        patches_per_case=f["patches_per_case"],
        patch_size=f["patch_size"],
        embedding_dim=f["embedding_dim"],
        seed=cfg["run"]["seed"],
    )
    paths = generate_cohort(out, spec)
    generated = config.defaults()
    generated["paths"] = {
        "manifest": "manifest.csv",
        "labels": "labels.csv",
        "embeddings": "embeddings.csv",
        "reference": "reference.ini",
        "out": "results",
    }
    generated["run"]["seed"] = cfg["run"]["seed"]
    generated["fixtures"] = dict(f)
    with open(os.path.join(out, "config.json"), "w") as fh:
        fh.write(config.dumps(generated))
    log.info("wrote cohort of %d cases to %s", spec.n_cases, os.path.dirname(paths["manifest"]))
    return 0


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as exc:  # --help / --version
            return int(exc.code or 0)
        if args.verbose:
            logging.getLogger("ovmorph").setLevel(logging.INFO)
        cfg = resolve_config(args)
        return HANDLERS[args.command](cfg)
    except OvmorphError as exc:
        print(f"ovmorph: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ovmorph: I/O error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
