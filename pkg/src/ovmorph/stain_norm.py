"""Macenko stain normalization in base-10 optical density space.

Typical usage::

    reference = load_reference()              # bundled default target
    normalized = normalize_to_reference(patch, reference)

``patch`` is an ``(h, w, 3)`` uint8 array.  Blank or background-only patches
raise :class:`~ovmorph.errors.InsufficientTissueError`; batch callers are
expected to catch it and skip the patch.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import (
    InsufficientTissueError,
    InvalidInputError,
    ParseError,
    SingularStainBasisError,
)

DEFAULT_BACKGROUND = 255.0
DEFAULT_OD_THRESHOLD = 0.15
DEFAULT_ANGLE_PERCENTILE = 1.0
MIN_TISSUE_PIXELS = 100
_PARALLEL_TOL = 1e-6


@dataclass(frozen=True)
class MacenkoParams:
    background_intensity: float = DEFAULT_BACKGROUND
    od_threshold: float = DEFAULT_OD_THRESHOLD
    angle_percentile: float = DEFAULT_ANGLE_PERCENTILE
    min_tissue_pixels: int = MIN_TISSUE_PIXELS

    def __post_init__(self):
        if not self.background_intensity > 0:
            raise InvalidInputError("background_intensity must be > 0")
        if not 0 <= self.angle_percentile < 50:
            raise InvalidInputError("angle_percentile must lie in [0, 50)")
        if self.od_threshold < 0:
            raise InvalidInputError("od_threshold must be >= 0")


@dataclass(frozen=True)
class StainMatrix:
    """Two unit OD-space stain vectors stored as the columns of a 3x2 array.

    Column 0 is hematoxylin, column 1 eosin.  Use :meth:`from_vectors` to
    build one from arbitrary non-negative directions; it normalizes and
    applies the ordering rule (larger red OD component first).
    """

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 2) or not np.all(np.isfinite(m)):
            raise InvalidInputError(f"stain matrix must be a finite 3x2 array, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_vectors(cls, a, b) -> "StainMatrix":
        cols = []
        for v in (a, b):
            v = np.clip(np.asarray(v, dtype=np.float64), 0.0, None)
            norm = np.linalg.norm(v)
            if norm == 0:
                raise SingularStainBasisError("stain vector vanishes after clamping")
            cols.append(v / norm)
        if cols[1][0] > cols[0][0]:
            cols.reverse()
        return cls(np.column_stack(cols))

    @property
    def hematoxylin(self) -> np.ndarray:
        return self.matrix[:, 0]

    @property
    def eosin(self) -> np.ndarray:
        return self.matrix[:, 1]

    def __repr__(self):
        h = ", ".join(f"{x:.4f}" for x in self.hematoxylin)
        e = ", ".join(f"{x:.4f}" for x in self.eosin)
        return f"StainMatrix(H=[{h}], E=[{e}])"


@dataclass(frozen=True)
class NormalizationReference:
    stain_matrix: StainMatrix
    max_concentrations: np.ndarray

    def __post_init__(self):
        mc = np.asarray(self.max_concentrations, dtype=np.float64).reshape(-1)
        if mc.shape != (2,) or not np.all(mc > 0) or not np.all(np.isfinite(mc)):
            raise InvalidInputError("max_concentrations must be two positive reals")
        object.__setattr__(self, "max_concentrations", mc)


def as_rgb_patch(patch) -> np.ndarray:
    arr = np.asarray(patch)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError(f"RGB patch must have shape (h, w, 3), got {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InvalidInputError("zero-sized patch")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255):
            raise InvalidInputError("channel values outside [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def rgb_to_od(patch, background_intensity: float = DEFAULT_BACKGROUND) -> np.ndarray:
    """OD_c = -log10((I_c + 1) / I0).

    With I0 = 255 a saturated channel maps to -log10(256/255) ~ -0.0017, the
    only (slightly) negative density the formula can produce.
    """
    if not background_intensity > 0:
        raise InvalidInputError("background_intensity must be > 0")
    rgb = as_rgb_patch(patch).astype(np.float64)
    return -np.log10((rgb + 1.0) / background_intensity)


def od_to_rgb(od, background_intensity: float = DEFAULT_BACKGROUND) -> np.ndarray:
    od = np.asarray(od, dtype=np.float64)
    rgb = background_intensity * np.power(10.0, -od) - 1.0
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def _tissue_pixels(od: np.ndarray, od_threshold: float) -> np.ndarray:
    flat = np.asarray(od, dtype=np.float64).reshape(-1, 3)
    return flat[np.linalg.norm(flat, axis=1) > od_threshold]


def estimate_stain_matrix(
    od,
    od_threshold: float = DEFAULT_OD_THRESHOLD,
    angle_percentile: float = DEFAULT_ANGLE_PERCENTILE,
    min_tissue_pixels: int = MIN_TISSUE_PIXELS,
) -> StainMatrix:
    """Estimate H and E directions from the principal plane of tissue OD vectors."""
    od = np.asarray(od, dtype=np.float64)
    if od.size == 0 or od.shape[-1] != 3:
        raise InvalidInputError(f"OD image must have 3 channels, got shape {od.shape}")
    tissue = _tissue_pixels(od, od_threshold)
    if len(tissue) < min_tissue_pixels:
        raise InsufficientTissueError(
            f"{len(tissue)} pixels above OD threshold {od_threshold}; need {min_tissue_pixels}"
        )

    # uncentered scatter matrix
    scatter = tissue.T @ tissue / len(tissue)
    _, vecs = np.linalg.eigh(scatter)
    first = vecs[:, 2]
    second = vecs[:, 1]
    if first.sum() < 0:
        first = -first
    if second[np.argmax(np.abs(second))] < 0:
        second = -second

    phi = np.arctan2(tissue @ second, tissue @ first)
    lo = np.percentile(phi, angle_percentile)
    hi = np.percentile(phi, 100.0 - angle_percentile)
    v_lo = first * np.cos(lo) + second * np.sin(lo)
    v_hi = first * np.cos(hi) + second * np.sin(hi)
    return StainMatrix.from_vectors(v_lo, v_hi)


def _pseudo_inverse(stains: StainMatrix) -> np.ndarray:
    s = stains.matrix
    if np.linalg.norm(np.cross(s[:, 0], s[:, 1])) < _PARALLEL_TOL:
        raise SingularStainBasisError("stain vectors are parallel")
    return np.linalg.solve(s.T @ s, s.T)


def compute_concentrations(od, stains: StainMatrix, clamp: bool = True) -> np.ndarray:
    """Per-pixel least-squares stain concentrations, shape ``od.shape[:-1] + (2,)``.

    With ``clamp`` (the default) negative concentrations are set to zero.
    """
    od = np.asarray(od, dtype=np.float64)
    pinv = _pseudo_inverse(stains)
    conc = od.reshape(-1, 3) @ pinv.T
    if clamp:
        np.maximum(conc, 0.0, out=conc)
    return conc.reshape(od.shape[:-1] + (2,))


def reconstruct_od(concentrations, stains: StainMatrix) -> np.ndarray:
    c = np.asarray(concentrations, dtype=np.float64)
    return (c.reshape(-1, 2) @ stains.matrix.T).reshape(c.shape[:-1] + (3,))


def extract_reference(patch, params: MacenkoParams | None = None) -> NormalizationReference:
    """Build a normalization target from a patch's own stains and concentrations."""
    params = params or MacenkoParams()
    od = rgb_to_od(patch, params.background_intensity)
    stains = estimate_stain_matrix(od, params.od_threshold, params.angle_percentile, params.min_tissue_pixels)
    conc = compute_concentrations(od, stains)
    max_c = np.percentile(conc.reshape(-1, 2), 99, axis=0)
    if not np.all(max_c > 0):
        raise InsufficientTissueError("a stain has zero 99th-percentile concentration")
    return NormalizationReference(stains, max_c)


def normalize_to_reference(patch, reference: NormalizationReference, params: MacenkoParams | None = None) -> np.ndarray:
    params = params or MacenkoParams()
    od = rgb_to_od(patch, params.background_intensity)
    stains = estimate_stain_matrix(od, params.od_threshold, params.angle_percentile, params.min_tissue_pixels)
    conc = compute_concentrations(od, stains).reshape(-1, 2)
    own_max = np.percentile(conc, 99, axis=0)
    # a stain with zero 99th percentile has nothing meaningful to rescale
    scale = np.where(own_max > 0, reference.max_concentrations / np.where(own_max > 0, own_max, 1.0), 1.0)
    conc = conc * scale
    out_od = conc @ reference.stain_matrix.matrix.T
    return od_to_rgb(out_od.reshape(od.shape), params.background_intensity)


def angle_between(a, b) -> float:
    """Angle in degrees between two 3-vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cos = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


# -- reference config --------------------------------------------------------

_CHANNELS = ("r", "g", "b")
_STAINS = ("hematoxylin", "eosin")


def load_reference(path=None) -> NormalizationReference:
    """Read a reference from the key/value config format (bundled default if ``path`` is None)."""
    parser = configparser.ConfigParser()
    if path is None:
        text = resources.files("ovmorph").joinpath("data/reference.ini").read_text()
        source = "<bundled reference.ini>"
    else:
        if not os.path.exists(path):
            raise ParseError("reference file not found", path)
        with open(path) as fh:
            text = fh.read()
        source = path
    try:
        parser.read_string(text, source=str(source))
        vectors = [
            [parser.getfloat("stain_matrix", f"{stain}_{ch}") for ch in _CHANNELS]
            for stain in _STAINS
        ]
        max_c = [parser.getfloat("max_concentrations", stain) for stain in _STAINS]
    except (configparser.Error, ValueError) as exc:
        raise ParseError(str(exc), source) from None
    matrix = StainMatrix.from_vectors(*vectors)
    if not np.allclose(matrix.hematoxylin, np.asarray(vectors[0]) / np.linalg.norm(vectors[0])):
        raise ParseError("hematoxylin vector must have the larger red component", source)
    return NormalizationReference(matrix, np.asarray(max_c))


def dump_reference(reference: NormalizationReference) -> str:
    lines = ["[stain_matrix]"]
    for j, stain in enumerate(_STAINS):
        for i, ch in enumerate(_CHANNELS):
            lines.append(f"{stain}_{ch} = {float(reference.stain_matrix.matrix[i, j])!r}")
    lines += ["", "[max_concentrations]"]
    for j, stain in enumerate(_STAINS):
        lines.append(f"{stain} = {float(reference.max_concentrations[j])!r}")
    return "\n".join(lines) + "\n"


def save_reference(path, reference: NormalizationReference) -> None:
    with open(path, "w") as fh:
        fh.write(dump_reference(reference))
