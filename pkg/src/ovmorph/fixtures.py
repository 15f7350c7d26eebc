"""Synthetic cohort with known ground truth.

Each case gets a subtype and TP53/BRCA1/ARID1A statuses.  Nuclear morphology
depends on subtype (size, elongation, contour irregularity, staining), BRCA1
darkens nuclei and ARID1A enlarges them; TP53 leaves morphology untouched and
is visible only in the deep-embedding columns.  Patches are rendered through
Beer-Lambert mixing of per-case perturbed H and E stain vectors, so they also
exercise stain normalization.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import rng as rngmod
from .feature_io import (
    GENES,
    MUTANT,
    SUBTYPES,
    WILDTYPE,
    CaseLabels,
    EmbeddingTable,
    ManifestRow,
    write_embeddings,
    write_labels,
    write_manifest,
)
from .imageio import write_pgm, write_ppm
from .stain_norm import dump_reference, load_reference

H_STAIN = np.array([0.65, 0.70, 0.29])
E_STAIN = np.array([0.07, 0.99, 0.11])

# radius, elongation, contour irregularity, hematoxylin density
SUBTYPE_MORPHOLOGY = {
    "serous": (7.0, 1.35, 0.12, 1.00),
    "mucinous": (6.0, 1.15, 0.30, 0.75),
    "endometrioid": (6.5, 1.60, 0.08, 0.90),
    "clearcell": (8.0, 1.10, 0.05, 0.65),
}


@dataclass(frozen=True)
class CohortSpec:
    n_cases: int = 60
    patches_per_case: int = 3
    patch_size: int = 128
    embedding_dim: int = 16
    cell: int = 32
    seed: int = 0


def _unit(v):
    v = np.clip(v, 0, None)
    return v / np.linalg.norm(v)


def case_labels(spec: CohortSpec) -> dict[str, CaseLabels]:
    """Balanced subtypes and near-balanced mutation statuses.

    TP53 alternates within every (subtype, BRCA1, ARID1A) cell, which keeps it
    uncorrelated with the genotypes and subtypes that do change morphology.
    """
    bitgen = rngmod.stream(spec.seed, 1)
    n = spec.n_cases
    subtypes = [SUBTYPES[i % len(SUBTYPES)] for i in range(n)]
    subtypes = [subtypes[j] for j in rngmod.permutation(bitgen, n)]
    status = {}
    for g in ("brca1", "arid1a"):
        perm = rngmod.permutation(bitgen, n)
        status[g] = np.empty(n, dtype=object)
        status[g][perm[: n // 2]] = MUTANT
        status[g][perm[n // 2:]] = WILDTYPE
    cells: dict[tuple, list[int]] = {}
    for i in range(n):
        cells.setdefault((subtypes[i], status["brca1"][i], status["arid1a"][i]), []).append(i)
    status["tp53"] = np.empty(n, dtype=object)
    flip = 0
    for key in sorted(cells):
        members = cells[key]
        for rank, j in enumerate(rngmod.permutation(bitgen, len(members))):
            status["tp53"][members[j]] = MUTANT if (rank + flip) % 2 == 0 else WILDTYPE
        flip += len(members) % 2
    labels = {}
    for i in range(n):
        muts = {g: status[g][i] for g in GENES}
        if i % 10 == 9:
            del muts["arid1a"]  # some cases without ARID1A sequencing
        labels[f"case{i:03d}"] = CaseLabels(subtypes[i], muts)
    return labels


def render_patch(bitgen, size, cell, morph, stains, min_fill=0.85):
    """Render one patch; returns (rgb uint8, label mask uint16)."""
    radius, elong, irregular, hdens = morph
    u = lambda k: rngmod.uniform53(bitgen, k)  # noqa: E731
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    # smooth eosin background
    noise = ndimage.gaussian_filter(u(size * size).reshape(size, size) - 0.5, 6.0, mode="wrap")
    noise /= max(np.abs(noise).max(), 1e-9)
    c_h = np.full((size, size), 0.03)
    c_e = 0.35 + 0.08 * noise
    mask = np.zeros((size, size), dtype=np.uint16)

    label = 0
    n_cells = size // cell
    for gi in range(n_cells):
        for gj in range(n_cells):
            draws = u(8)
            if draws[0] > min_fill:
                continue
            cy = gi * cell + cell / 2 + (draws[1] - 0.5) * 6
            cx = gj * cell + cell / 2 + (draws[2] - 0.5) * 6
            r = radius * (0.8 + 0.4 * draws[3])
            e = 1.0 + (elong - 1.0) * (0.7 + 0.6 * draws[4])
            theta = math.pi * draws[5]
            lobes = 3 + int(draws[6] * 3)
            phase = 2 * math.pi * draws[7]
            reach = r * math.sqrt(e) * (1 + irregular)
            if reach > cell / 2 - 2:
                r *= (cell / 2 - 2) / reach
            dy, dx = yy - cy, xx - cx
            a = dx * math.cos(theta) + dy * math.sin(theta)
            b = -dx * math.sin(theta) + dy * math.cos(theta)
            a /= math.sqrt(e)
            b *= math.sqrt(e)
            rho = np.hypot(a, b)
            phi = np.arctan2(b, a)
            inside = rho <= r * (1 + irregular * np.sin(lobes * phi + phase))
            inside &= mask == 0
            if inside.sum() < 12:
                continue
            label += 1
            mask[inside] = label
            dens = hdens * (0.9 + 0.2 * u(1)[0])
            c_h[inside] = dens * (0.92 + 0.16 * u(int(inside.sum())))
            c_e[inside] = 0.12

    od = c_h[..., None] * stains[0] + c_e[..., None] * stains[1]
    rgb = 255.0 * np.power(10.0, -od) - 1.0
    rgb += (u(rgb.size).reshape(rgb.shape) - 0.5) * 3.0
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8), mask


def _embedding(bitgen, dim, lab: CaseLabels, case_offset):
    z = np.sqrt(-2 * np.log(1 - rngmod.uniform53(bitgen, dim))) * np.cos(2 * np.pi * rngmod.uniform53(bitgen, dim))
    vec = z + case_offset
    sign = lambda g: (1.0 if lab.mutations.get(g) == MUTANT else -1.0) if g in lab.mutations else 0.0  # noqa: E731
    blocks = [("tp53", 0, 4, 0.8), ("brca1", 4, 7, 0.5), ("arid1a", 7, 10, 0.5)]
    for gene, lo, hi, amp in blocks:
        if hi <= dim:
            vec[lo:hi] += amp * sign(gene)
    if dim >= 14:
        vec[10 + SUBTYPES.index(lab.subtype)] += 0.7
    return vec


def generate_cohort(out_dir, spec: CohortSpec | None = None) -> dict[str, str]:
    """Write patches, masks, manifest, labels, embeddings and reference to ``out_dir``.

    Returns the written paths by role.
    """
    spec = spec or CohortSpec()
    os.makedirs(out_dir, exist_ok=True)
    labels = case_labels(spec)
    rows = []
    emb = EmbeddingTable(spec.embedding_dim)
    for ci, (case_id, lab) in enumerate(labels.items()):
        bitgen = rngmod.stream(spec.seed, 2, ci)
        radius, elong, irregular, hdens = SUBTYPE_MORPHOLOGY[lab.subtype]
        if lab.mutations.get("brca1") == MUTANT:
            hdens += 0.25
        if lab.mutations.get("arid1a") == MUTANT:
            radius += 0.8
        jitter = rngmod.uniform53(bitgen, 6) - 0.5
        stains = (_unit(H_STAIN + 0.08 * jitter[:3]), _unit(E_STAIN + 0.08 * jitter[3:]))
        offset = 0.3 * (rngmod.uniform53(bitgen, spec.embedding_dim) - 0.5)
        for p in range(spec.patches_per_case):
            pid = f"{case_id}_p{p}"
            rgb, mask = render_patch(bitgen, spec.patch_size, spec.cell, (radius, elong, irregular, hdens), stains)
            image_path = os.path.join(out_dir, "patches", f"{pid}.ppm")
            mask_path = os.path.join(out_dir, "masks", f"{pid}.pgm")
            write_ppm(image_path, rgb)
            write_pgm(mask_path, mask)
            rows.append(ManifestRow(pid, case_id, image_path, mask_path))
            emb.rows[pid] = _embedding(bitgen, spec.embedding_dim, lab, offset)

    paths = {
        "manifest": os.path.join(out_dir, "manifest.csv"),
        "labels": os.path.join(out_dir, "labels.csv"),
        "embeddings": os.path.join(out_dir, "embeddings.csv"),
        "reference": os.path.join(out_dir, "reference.ini"),
    }
    write_manifest(paths["manifest"], rows)
    write_labels(paths["labels"], labels)
    write_embeddings(paths["embeddings"], emb)
    with open(paths["reference"], "w") as fh:
        fh.write(dump_reference(load_reference()))
    return paths


# -- small synthetic helpers used by tests and the acceptance suite ----------


def disc_coords(radius: float, center=(0, 0)) -> np.ndarray:
    """Pixel coordinates whose centres lie within ``radius`` of ``center``."""
    r = int(math.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    inside = yy * yy + xx * xx <= radius * radius
    return np.column_stack((yy[inside] + center[0], xx[inside] + center[1])).astype(np.int64)


def random_stain_pair(bitgen, min_separation_deg: float = 15.0):
    """Two non-negative unit stain vectors at least ``min_separation_deg`` apart, H first."""
    while True:
        a = _unit(rngmod.uniform53(bitgen, 3) + 0.05)
        b = _unit(rngmod.uniform53(bitgen, 3) + 0.05)
        ang = math.degrees(math.acos(min(1.0, float(a @ b))))
        if ang >= min_separation_deg:
            return (a, b) if a[0] >= b[0] else (b, a)


def two_stain_od(bitgen, h, e, n_pixels=4096, pure_fraction=0.1):
    """OD pixels mixing stains ``h`` and ``e`` plus the concentrations used.

    A ``pure_fraction`` of pixels carries a single stain each, so the extreme
    angular directions coincide with the stain vectors.
    """
    c = 0.2 + 1.3 * rngmod.uniform53(bitgen, 2 * n_pixels).reshape(n_pixels, 2)
    k = int(n_pixels * pure_fraction)
    c[:k, 1] = 0.0
    c[k:2 * k, 0] = 0.0
    od = c @ np.vstack([h, e])
    return od, c
