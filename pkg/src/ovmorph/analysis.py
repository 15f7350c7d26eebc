"""Correlation, PCA and per-subtype summaries of feature tables."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError


@dataclass
class CorrelationMatrix:
    names: list[str]
    matrix: np.ndarray
    undefined: np.ndarray  # bool, True where a zero-variance feature is involved

    def get(self, a: str, b: str) -> float:
        return float(self.matrix[self.names.index(a), self.names.index(b)])


def pearson_matrix(X, names: Sequence[str] | None = None) -> CorrelationMatrix:
    """Pairwise Pearson r.  Pairs touching a constant feature are NaN and flagged."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidInputError("correlation needs at least 2 samples")
    d = X.shape[1]
    names = list(names) if names is not None else [f"f{i}" for i in range(d)]
    centered = X - X.mean(axis=0)
    ss = (centered * centered).sum(axis=0)
    constant = ss <= 0
    cross = centered.T @ centered
    denom = np.sqrt(np.outer(ss, ss))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.clip(cross / denom, -1.0, 1.0)
    r = np.triu(r, 1)
    r = r + r.T
    undefined = constant[:, None] | constant[None, :]
    r[undefined] = np.nan
    np.fill_diagonal(undefined, constant)
    np.fill_diagonal(r, 1.0)
    return CorrelationMatrix(names, r, undefined)


@dataclass
class PcaModel:
    components: np.ndarray  # (k, d) orthonormal rows
    explained_variance: np.ndarray
    total_variance: float
    mean: np.ndarray
    scale: np.ndarray | None
    projections: np.ndarray

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance

    def _prepare(self, X) -> np.ndarray:
        Xc = np.asarray(X, dtype=np.float64) - self.mean
        if self.scale is not None:
            Xc = Xc / self.scale
        return Xc

    def transform(self, X) -> np.ndarray:
        return self._prepare(X) @ self.components.T

    def inverse_transform(self, Z) -> np.ndarray:
        Xc = np.asarray(Z, dtype=np.float64) @ self.components
        if self.scale is not None:
            Xc = Xc * self.scale
        return Xc + self.mean


def pca_fit(X, n_components: int, standardize: bool = True) -> PcaModel:
    """PCA by eigendecomposition of the covariance (or correlation) matrix.

    Components are sorted by decreasing eigenvalue and signed so that each
    one's largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError("PCA needs a 2-D sample matrix")
    n, d = X.shape
    if not 1 <= n_components <= min(d, n - 1):
        raise InvalidInputError(f"n_components must lie in [1, {min(d, n - 1)}], got {n_components}")
    mean = X.mean(axis=0)
    scale = None
    Xc = X - mean
    if standardize:
        std = X.std(axis=0, ddof=1)
        scale = np.where(std > 1e-12, std, 1.0)
        Xc = Xc / scale
    cov = Xc.T @ Xc / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1][:n_components]
    comps = vecs[:, order].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    explained = np.maximum(vals[order], 0.0)
    return PcaModel(comps, explained, float(np.trace(cov)), mean, scale, Xc @ comps.T)


@dataclass
class SubtypeHeatmap:
    subtypes: list[str]
    names: list[str]
    means: np.ndarray  # (n_subtypes, d)
    zscores: np.ndarray


def subtype_feature_heatmap(X, subtypes: Sequence[str], names: Sequence[str]) -> SubtypeHeatmap:
    """Per-subtype feature means, z-scored per feature across the subtype means."""
    X = np.asarray(X, dtype=np.float64)
    subtypes = [str(s) for s in subtypes]
    if len(subtypes) != X.shape[0] or X.shape[0] == 0:
        raise InvalidInputError("need one subtype label per sample and at least one sample")
    groups = sorted(set(subtypes))
    lab = np.array(subtypes)
    means = np.array([X[lab == g].mean(axis=0) for g in groups])
    centre = means.mean(axis=0)
    spread = means.std(axis=0)
    z = np.zeros_like(means)
    ok = spread > 1e-12 * np.maximum(1.0, np.abs(centre))
    z[:, ok] = (means[:, ok] - centre[ok]) / spread[ok]
    return SubtypeHeatmap(groups, list(names), means, z)


def point_biserial(X, subtypes: Sequence[str]) -> tuple[list[str], np.ndarray]:
    """Pearson r of each feature against each one-vs-rest subtype indicator.

    Undefined pairs (constant feature or single-group indicator) are NaN.
    """
    X = np.asarray(X, dtype=np.float64)
    lab = np.array([str(s) for s in subtypes])
    groups = sorted(set(lab.tolist()))
    out = np.full((len(groups), X.shape[1]), np.nan)
    for i, g in enumerate(groups):
        ind = (lab == g).astype(np.float64)
        corr = pearson_matrix(np.column_stack([ind, X])).matrix[0, 1:]
        out[i] = corr
    return groups, out


def importance_table(names: Sequence[str], importances) -> list[tuple[str, float, int]]:
    """(feature, importance, rank) sorted by decreasing importance; rank 1 is largest."""
    imp = np.asarray(importances, dtype=np.float64)
    if len(names) != len(imp):
        raise InvalidInputError("one importance per feature name required")
    order = sorted(range(len(imp)), key=lambda i: (-imp[i], i))
    return [(names[i], float(imp[i]), r + 1) for r, i in enumerate(order)]


# -- CSV output --------------------------------------------------------------


def _fmt(x) -> str:
    x = float(x)
    return repr(x) if np.isfinite(x) else ""


def write_correlation_csv(path, corr: CorrelationMatrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature"] + corr.names)
        for name, row in zip(corr.names, corr.matrix):
            w.writerow([name] + [_fmt(v) for v in row])


def write_pca_csvs(proj_path, var_path, pca: PcaModel, ids: Sequence[str], labels: Sequence) -> None:
    k = pca.components.shape[0]
    with open(proj_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patch_id"] + [f"pc{i + 1}" for i in range(k)] + ["label"])
        for pid, row, lab in zip(ids, pca.projections, labels):
            w.writerow([pid] + [_fmt(v) for v in row] + [lab if lab is not None else ""])
    with open(var_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component", "explained_variance", "explained_variance_ratio"])
        for i, (v, r) in enumerate(zip(pca.explained_variance, pca.explained_variance_ratio)):
            w.writerow([f"pc{i + 1}", _fmt(v), _fmt(r)])


def write_heatmap_csv(path, heat: SubtypeHeatmap) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subtype", "statistic"] + heat.names)
        for g, m, z in zip(heat.subtypes, heat.means, heat.zscores):
            w.writerow([g, "mean"] + [_fmt(v) for v in m])
            w.writerow([g, "zscore"] + [_fmt(v) for v in z])


def write_point_biserial_csv(path, groups, names, matrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subtype"] + list(names))
        for g, row in zip(groups, matrix):
            w.writerow([g] + [_fmt(v) for v in row])


def write_importance_csv(path, table) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "importance", "rank"])
        for name, imp, rank in table:
            w.writerow([name, _fmt(imp), rank])
