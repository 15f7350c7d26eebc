"""Per-nucleus morphometric features and per-patch aggregation.

Regions come from an instance label mask (0 = background, every other value
is one nucleus).  Eight features are measured per nucleus:

====================  =====================================================
area                  pixel count
perimeter             8-neighbour boundary chain length (1 axial, sqrt 2
                      diagonal), summed over the region's 8-connected parts
major/minor axis      4 sqrt(eigenvalue) of the second central moments with
                      the 1/12 unit-pixel correction per axis
eccentricity          sqrt(1 - minor_eig / major_eig)
solidity              area / max(area, hull area of pixel centres)
extent                area / bounding-box area
mean_intensity        mean luminance 0.299 R + 0.587 G + 0.114 B
====================  =====================================================

Second moments, hull areas and luminance sums are accumulated in integer
arithmetic, which makes the features exactly invariant to translation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import InvalidInputError, ParseError

FEATURE_NAMES = (
    "area",
    "perimeter",
    "major_axis_length",
    "minor_axis_length",
    "eccentricity",
    "solidity",
    "extent",
    "mean_intensity",
)
STAT_NAMES = ("mean", "std", "var")
STAT_COLUMNS = tuple(f"{f}_{s}" for f in FEATURE_NAMES for s in STAT_NAMES)
NUCLEUS_HEADER = ("patch_id", "nucleus_id") + FEATURE_NAMES
PATCH_HEADER = ("patch_id", "nucleus_count") + STAT_COLUMNS

_SQRT2 = math.sqrt(2.0)
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class NucleusFeatures:
    area: float
    perimeter: float
    major_axis_length: float
    minor_axis_length: float
    eccentricity: float
    solidity: float
    extent: float
    mean_intensity: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


@dataclass(frozen=True)
class MorphometryFilters:
    min_area: int = 10
    exclude_border: bool = True


@dataclass(frozen=True)
class Region:
    label: int
    coords: np.ndarray  # (n, 2) int64 (row, col), raster order

    def __len__(self):
        return len(self.coords)


@dataclass
class PatchFeatureVector:
    patch_id: str
    nucleus_count: int
    stats: np.ndarray  # (8, 3): mean, std, var per feature

    @property
    def vector(self) -> np.ndarray:
        """The 24 statistics in ``STAT_COLUMNS`` order."""
        return self.stats.reshape(-1)

    @property
    def empty(self) -> bool:
        return self.nucleus_count == 0


def as_label_mask(mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise InvalidInputError(f"label mask must be 2-D, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        raise InvalidInputError("label mask must hold integers")
    if arr.size and arr.min() < 0:
        raise InvalidInputError("label mask holds negative labels")
    return arr


def extract_regions(mask) -> list[Region]:
    """One :class:`Region` per non-zero label, ordered by label."""
    mask = as_label_mask(mask)
    flat = mask.ravel()
    fg = np.flatnonzero(flat)
    if len(fg) == 0:
        return []
    labels = flat[fg]
    order = np.argsort(labels, kind="stable")
    fg = fg[order]
    labels = labels[order]
    cuts = np.flatnonzero(np.diff(labels)) + 1
    width = mask.shape[1]
    regions = []
    for chunk, lab in zip(np.split(fg, cuts), labels[np.r_[0, cuts]]):
        coords = np.column_stack((chunk // width, chunk % width)).astype(np.int64)
        regions.append(Region(int(lab), coords))
    return regions


def label_binary_mask(binary) -> np.ndarray:
    """Instance labels for a binary mask, 8-connectivity, numbered in raster order."""
    labels, _ = ndimage.label(np.asarray(binary, dtype=bool), structure=_EIGHT)
    return labels


def _local_image(coords: np.ndarray) -> np.ndarray:
    """Binary image of the region on its bounding box, padded by one pixel."""
    r0, c0 = coords.min(axis=0)
    r1, c1 = coords.max(axis=0)
    img = np.zeros((r1 - r0 + 3, c1 - c0 + 3), dtype=np.uint8)
    img[coords[:, 0] - r0 + 1, coords[:, 1] - c0 + 1] = 1
    return img


def chain_perimeter(coords: np.ndarray) -> float:
    """Boundary chain length summed over 8-connected components.

    An isolated pixel has an empty chain; it is counted as length 1 so that
    every region has a positive perimeter.
    """
    img = _local_image(np.asarray(coords))
    comps, n = ndimage.label(img, structure=_EIGHT)
    axial = diagonal = isolated = 0
    if n == 1:
        parts = [img]
    else:
        parts = []
        for sl, k in zip(ndimage.find_objects(comps), range(1, n + 1)):
            sub = (comps[sl] == k).astype(np.uint8)
            parts.append(np.pad(sub, 1))
    for part in parts:
        a, d = kernels.contour_steps(np.ascontiguousarray(part))
        if a == 0 and d == 0:
            isolated += 1
        axial += a
        diagonal += d
    return axial + diagonal * _SQRT2 + isolated


def _cross(o, a, b) -> int:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    """Monotone-chain hull, counter-clockwise, collinear points dropped."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def hull_area_twice(coords: np.ndarray) -> int:
    """Twice the hull area of the pixel centres (an exact integer)."""
    coords = np.asarray(coords, dtype=np.int64)
    # the row-wise extreme pixels carry the whole hull
    rows = coords[:, 0]
    order = np.lexsort((coords[:, 1], rows))
    rows_sorted = rows[order]
    cols_sorted = coords[order, 1]
    starts = np.r_[0, np.flatnonzero(np.diff(rows_sorted)) + 1]
    ends = np.r_[starts[1:] - 1, len(rows_sorted) - 1]
    cand = [(int(r), int(c)) for r, c in zip(rows_sorted[starts], cols_sorted[starts])]
    cand += [(int(r), int(c)) for r, c in zip(rows_sorted[ends], cols_sorted[ends])]
    hull = convex_hull(cand)
    if len(hull) < 3:
        return 0
    twice = 0
    for (x0, y0), (x1, y1) in zip(hull, hull[1:] + hull[:1]):
        twice += x0 * y1 - x1 * y0
    return abs(twice)


def second_moments(coords: np.ndarray) -> tuple[float, float, float]:
    """(m_cc, m_rr, m_rc): normalized central moments plus 1/12 on the diagonal."""
    coords = np.asarray(coords, dtype=np.int64)
    n = len(coords)
    r = coords[:, 0]
    c = coords[:, 1]
    sr, sc = int(r.sum()), int(c.sum())
    srr, scc, src = int((r * r).sum()), int((c * c).sum()), int((r * c).sum())
    n2 = n * n
    m_cc = (n * scc - sc * sc) / n2 + 1.0 / 12.0
    m_rr = (n * srr - sr * sr) / n2 + 1.0 / 12.0
    m_rc = (n * src - sr * sc) / n2
    return m_cc, m_rr, m_rc


def ellipse_axes(m_cc: float, m_rr: float, m_rc: float) -> tuple[float, float, float]:
    """(major, minor, eccentricity) from normalized second moments."""
    half_sum = (m_cc + m_rr) / 2.0
    half_diff = (m_cc - m_rr) / 2.0
    root = math.sqrt(half_diff * half_diff + m_rc * m_rc)
    lam_hi = half_sum + root
    lam_lo = max(half_sum - root, 0.0)
    ecc = math.sqrt(max(0.0, 1.0 - lam_lo / lam_hi))
    return 4.0 * math.sqrt(lam_hi), 4.0 * math.sqrt(lam_lo), ecc


def mean_luminance(coords: np.ndarray, patch: np.ndarray) -> float:
    rgb = patch[coords[:, 0], coords[:, 1]].astype(np.int64)
    total = int((rgb @ np.array([299, 587, 114], dtype=np.int64)).sum())
    return total / (1000 * len(coords))


def compute_nucleus_features(
    coords,
    patch,
    filters: MorphometryFilters | None = None,
) -> NucleusFeatures | None:
    """Features of one region, or ``None`` when a filter rejects it.

    ``coords`` is an ``(n, 2)`` array of (row, col) pixel coordinates or a
    :class:`Region`.  Pass ``filters=MorphometryFilters(0, False)`` to measure
    unconditionally.
    """
    if isinstance(coords, Region):
        coords = coords.coords
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    if len(coords) == 0:
        raise InvalidInputError("empty region")
    patch = np.asarray(patch)
    if patch.ndim != 3 or patch.shape[2] != 3:
        raise InvalidInputError(f"patch must have shape (h, w, 3), got {patch.shape}")
    h, w = patch.shape[:2]
    r0, c0 = coords.min(axis=0)
    r1, c1 = coords.max(axis=0)
    if r0 < 0 or c0 < 0 or r1 >= h or c1 >= w:
        raise InvalidInputError("region coordinates fall outside the patch")
    filters = filters or MorphometryFilters()
    area = len(coords)
    if area < filters.min_area:
        return None
    if filters.exclude_border and (r0 == 0 or c0 == 0 or r1 == h - 1 or c1 == w - 1):
        return None

    major, minor, ecc = ellipse_axes(*second_moments(coords))
    hull2 = hull_area_twice(coords)
    solidity = area / max(area, hull2 / 2.0)
    extent = area / (int(r1 - r0 + 1) * int(c1 - c0 + 1))
    return NucleusFeatures(
        area=float(area),
        perimeter=chain_perimeter(coords),
        major_axis_length=major,
        minor_axis_length=minor,
        eccentricity=ecc,
        solidity=solidity,
        extent=extent,
        mean_intensity=mean_luminance(coords, patch),
    )


def aggregate_patch(features: Sequence[NucleusFeatures], patch_id: str) -> PatchFeatureVector:
    """Mean, sample std (n-1) and variance of every feature across nuclei.

    An empty list yields ``nucleus_count == 0`` with NaN statistics.  Sums use
    ``math.fsum`` so the result does not depend on nucleus order.
    """
    n = len(features)
    stats = np.full((len(FEATURE_NAMES), 3), np.nan)
    if n == 0:
        return PatchFeatureVector(patch_id, 0, stats)
    values = np.array([f.as_array() for f in features])
    for j in range(values.shape[1]):
        col = values[:, j].tolist()
        mean = math.fsum(col) / n
        var = math.fsum((v - mean) ** 2 for v in col) / (n - 1) if n > 1 else 0.0
        stats[j] = (mean, math.sqrt(var), var)
    return PatchFeatureVector(patch_id, n, stats)


def measure_patch(patch, mask, patch_id: str, filters: MorphometryFilters | None = None):
    """Measure every accepted nucleus of a patch.

    Returns ``(nuclei, vector)`` where ``nuclei`` is a list of
    ``(label, NucleusFeatures)`` in label order.
    """
    patch = np.asarray(patch)
    mask = as_label_mask(mask)
    if mask.shape != patch.shape[:2]:
        raise InvalidInputError(f"mask shape {mask.shape} does not match patch {patch.shape[:2]}")
    nuclei = []
    for region in extract_regions(mask):
        feats = compute_nucleus_features(region.coords, patch, filters)
        if feats is not None:
            nuclei.append((region.label, feats))
    return nuclei, aggregate_patch([f for _, f in nuclei], patch_id)


# -- CSV ---------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_nucleus_csv(path, rows: Iterable[tuple[str, int, NucleusFeatures]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NUCLEUS_HEADER)
        for patch_id, nucleus_id, feats in rows:
            w.writerow([patch_id, nucleus_id] + [_fmt(v) for v in astuple(feats)])


def read_nucleus_csv(path) -> list[tuple[str, int, NucleusFeatures]]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != NUCLEUS_HEADER:
            raise ParseError(f"unexpected header {header}", path)
        for i, row in enumerate(reader, start=1):
            if len(row) != len(NUCLEUS_HEADER):
                raise ParseError(f"expected {len(NUCLEUS_HEADER)} fields, got {len(row)}", path, i)
            try:
                out.append((row[0], int(row[1]), NucleusFeatures(*(float(v) for v in row[2:]))))
            except ValueError as exc:
                raise ParseError(str(exc), path, i) from None
    return out


def write_patch_csv(path, vectors: Iterable[PatchFeatureVector]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATCH_HEADER)
        for v in vectors:
            w.writerow([v.patch_id, v.nucleus_count] + [_fmt(x) for x in v.vector])


def read_patch_csv(path) -> list[PatchFeatureVector]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != PATCH_HEADER:
            raise ParseError(f"unexpected header {header}", path)
        for i, row in enumerate(reader, start=1):
            if len(row) != len(PATCH_HEADER):
                raise ParseError(f"expected {len(PATCH_HEADER)} fields, got {len(row)}", path, i)
            try:
                stats = np.array([float(v) for v in row[2:]]).reshape(len(FEATURE_NAMES), 3)
                out.append(PatchFeatureVector(row[0], int(row[1]), stats))
            except ValueError as exc:
                raise ParseError(str(exc), path, i) from None
    return out
