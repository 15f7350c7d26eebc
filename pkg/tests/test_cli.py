import csv
import json
import os

import numpy as np
import pytest

from ovmorph import config, feature_io
from ovmorph.errors import ValidationError
from ovmorph.fixtures import H_STAIN, E_STAIN, disc_coords
from ovmorph.imageio import write_pgm, write_ppm
from ovmorph.morphometry import FEATURE_NAMES

from conftest import run_cli, tree_bytes


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def stained_patch(size=64, centers=((16, 16), (16, 48), (48, 16), (48, 48)), radius=7):
    c_h = np.full((size, size), 0.05)
    c_e = np.full((size, size), 0.4)
    mask = np.zeros((size, size), dtype=np.uint16)
    for label, ctr in enumerate(centers, start=1):
        yx = disc_coords(radius, ctr)
        mask[yx[:, 0], yx[:, 1]] = label
        c_h[yx[:, 0], yx[:, 1]] = 0.9
        c_e[yx[:, 0], yx[:, 1]] = 0.1
    od = c_h[..., None] * H_STAIN / np.linalg.norm(H_STAIN) + c_e[..., None] * E_STAIN / np.linalg.norm(E_STAIN)
    rgb = np.clip(np.rint(255.0 * 10.0 ** -od - 1.0), 0, 255).astype(np.uint8)
    return rgb, mask


@pytest.fixture
def small_project(tmp_path):
    """Three patches: two stained, one blank white (no tissue)."""
    rows = []
    for i, kind in enumerate(["tissue", "tissue", "white"]):
        rgb, mask = stained_patch()
        if kind == "white":
            rgb[:] = 255
            mask[:] = 0
        img, msk = tmp_path / f"p{i}.ppm", tmp_path / f"p{i}.pgm"
        write_ppm(img, rgb)
        write_pgm(msk, mask)
        rows.append(feature_io.ManifestRow(f"p{i}", f"c{i}", str(img), str(msk)))
    feature_io.write_manifest(tmp_path / "manifest.csv", rows)
    cfg = {"paths": {"manifest": "manifest.csv", "out": "out"}, "run": {"seed": 3}}
    (tmp_path / "config.json").write_text(json.dumps(cfg))
    return tmp_path


def test_normalize_skips_blank_patch(small_project):
    assert run_cli("normalize", "--config", small_project / "config.json") == 0
    out = small_project / "out"
    assert sorted(os.listdir(out / "normalized")) == ["p0.ppm", "p1.ppm"]
    skips = read_csv(out / "skipped.csv")
    assert [(s["patch_id"], s["kind"]) for s in skips] == [("p2", "skipped")]
    assert [r["patch_id"] for r in read_csv(out / "normalized_manifest.csv")] == ["p0", "p1"]


def test_normalize_rerun_identical(small_project):
    cfg = small_project / "config.json"
    assert run_cli("normalize", "--config", cfg) == 0
    first = tree_bytes(small_project / "out")
    assert run_cli("normalize", "--config", cfg, "--workers", 3) == 0
    assert tree_bytes(small_project / "out") == first


def test_missing_mask_is_error(small_project):
    os.remove(small_project / "p1.pgm")
    cfg = small_project / "config.json"
    assert run_cli("normalize", "--config", cfg) == 2
    skips = read_csv(small_project / "out" / "skipped.csv")
    assert {s["patch_id"]: s["kind"] for s in skips} == {"p1": "error", "p2": "skipped"}
    # tolerated when the error budget allows it
    assert run_cli("normalize", "--config", cfg, "--run.max_error_rate", 0.5) == 0


def test_features_measure_discs(small_project):
    cfg = small_project / "config.json"
    assert run_cli("features", "--config", cfg, "--morphometry.normalize", "false") == 0
    out = small_project / "out"
    nuclei = read_csv(out / "nucleus_features.csv")
    assert len(nuclei) == 8
    assert {float(n["area"]) for n in nuclei} == {float(len(disc_coords(7)))}
    patches = {r["patch_id"]: r for r in read_csv(out / "patch_features.csv")}
    assert int(patches["p0"]["nucleus_count"]) == 4
    assert int(patches["p2"]["nucleus_count"]) == 0
    assert float(patches["p0"]["area_std"]) == 0.0
    assert patches["p2"]["area_mean"].lower() == "nan"
    # aggregate rebuilds the same patch table from the nucleus table
    before = (out / "patch_features.csv").read_bytes()
    assert run_cli("aggregate", "--config", cfg) == 0
    assert (out / "patch_features.csv").read_bytes() == before


def test_features_with_normalization_skips_blank(small_project):
    assert run_cli("features", "--config", small_project / "config.json") == 0
    skips = read_csv(small_project / "out" / "features_skipped.csv")
    assert [(s["patch_id"], s["kind"]) for s in skips] == [("p2", "skipped")]


@pytest.mark.parametrize(
    "argv, fragment",
    [
        (["--stain.bogus", "1"], "stain.bogus"),
        (["--forest.n_trees", "many"], "forest.n_trees"),
        (["--cv.k", "1"], "cv.k"),
        (["--fusion.policy", "magic"], "fusion.policy"),
    ],
)
def test_bad_flags_exit_1(small_project, capsys, argv, fragment):
    assert run_cli("normalize", "--config", small_project / "config.json", *argv) == 1
    assert fragment in capsys.readouterr().err


def test_bad_config_file(tmp_path, capsys):
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"stain": {"threshold": 0.2}, "run": {"seed": 1}}))
    assert run_cli("normalize", "--config", bad) == 1
    assert "stain.threshold" in capsys.readouterr().err
    bad.write_text("{not json")
    assert run_cli("normalize", "--config", bad) == 1
    assert run_cli("normalize", "--config", tmp_path / "missing.json") == 1


def test_seed_required(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"paths": {"manifest": "m.csv"}}))
    assert run_cli("normalize", "--config", cfg) == 1
    assert "seed" in capsys.readouterr().err


def test_config_load_and_override(tmp_path):
    p = tmp_path / "sub" / "c.json"
    p.parent.mkdir()
    p.write_text(json.dumps({"paths": {"manifest": "../m.csv"}, "cv": {"targets": "tp53, brca1"}}))
    cfg = config.load(p)
    assert cfg["paths"]["manifest"] == str(tmp_path / "m.csv")
    assert cfg["cv"]["targets"] == ["tp53", "brca1"]
    config.override(cfg, "forest.max_depth", "none")
    config.override(cfg, "forest.bootstrap", "no")
    assert cfg["forest"]["max_depth"] is None and cfg["forest"]["bootstrap"] is False
    with pytest.raises(ValidationError):
        config.override(cfg, "forest.n_trees", "2.5")
    with pytest.raises(ValidationError):
        config.validate(cfg)  # no seed
    cfg["run"]["seed"] = 0
    assert config.validate(cfg) is cfg
    assert json.loads(config.dumps(cfg)) == cfg


@pytest.fixture(scope="module")
def mini(tmp_path_factory):
    root = tmp_path_factory.mktemp("mini")
    assert run_cli(
        "fixtures", "--out", root, "--seed", 5, "--fixtures.n_cases", 16,
        "--fixtures.patches_per_case", 2, "--fixtures.patch_size", 64,
    ) == 0
    cfg = root / "config.json"
    for cmd in ("features", "fuse"):
        assert run_cli(cmd, "--config", cfg) == 0
    return root, cfg


def test_fixture_config_is_relative(mini):
    root, cfg = mini
    raw = json.loads(cfg.read_text())
    assert raw["paths"]["manifest"] == "manifest.csv"
    assert raw["run"]["seed"] == 5


def test_fused_table(mini):
    root, _ = mini
    rows = read_csv(root / "results" / "fused.csv")
    assert len(rows) == 32
    cols = list(rows[0])
    assert f"{FEATURE_NAMES[0]}_mean" in cols and "e0" in cols


def test_train_predict(mini):
    root, cfg = mini
    common = ["--config", cfg, "--forest.n_trees", 10, "--cv.targets", "tp53,subtype"]
    assert run_cli("train", *common, "--fusion.standardize", "true") == 0
    models = root / "results" / "models"
    assert (models / "model_tp53.json").exists()
    assert (models / "model_subtype.standardizer.json").exists()
    assert run_cli("predict", *common, "--fusion.standardize", "true") == 0
    preds = read_csv(root / "results" / "predictions_subtype.csv")
    assert len(preds) == 32
    probs = np.array([[float(v) for k, v in r.items() if k.startswith("p_")] for r in preds])
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_cv_unit_filter(mini, tmp_path):
    _, cfg = mini
    out = tmp_path / "cvout"
    argv = ["cv", "--config", cfg, "--out", out, "--forest.n_trees", 10, "--cv.k", 4,
            "--cv.targets", "tp53", "--cv.policies", "morphometric-only", "--evaluation.unit", "case"]
    # cv reads patch_features.csv from the configured output dir
    os.makedirs(out)
    src = mini[0] / "results" / "patch_features.csv"
    (out / "patch_features.csv").write_bytes(src.read_bytes())
    assert run_cli(*argv) == 0
    report = json.loads((out / "cv" / "morphometric-only" / "report_tp53.json").read_text())
    assert list(report["units"]) == ["case"]


def test_analyze(mini):
    root, cfg = mini
    assert run_cli("analyze", "--config", cfg, "--forest.n_trees", 10, "--cv.targets", "subtype") == 0
    res = root / "results"
    corr = list(csv.reader(open(res / "correlation_matrix.csv")))
    assert corr[0][1:] == list(FEATURE_NAMES)
    heat = read_csv(res / "subtype_heatmap.csv")
    assert len(heat) > 0
    imp = read_csv(res / "feature_importance_subtype.csv")
    assert sum(float(r["importance"]) for r in imp) == pytest.approx(1.0)
    assert len(read_csv(res / "pca_variance.csv")) == 2


def test_help_and_no_command(capsys):
    assert run_cli("--help") == 0
    assert run_cli() == 1
