"""Dataset assembly: embeddings, labels, fusion, standardization and folds."""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import rng as rngmod
from .errors import (
    DimensionMismatchError,
    DuplicateIdError,
    InfeasibleStratificationError,
    InvalidInputError,
    MissingEmbeddingError,
    NonFiniteValueError,
    ParseError,
)
from .morphometry import STAT_COLUMNS, PatchFeatureVector

log = logging.getLogger(__name__)

GENES = ("tp53", "brca1", "arid1a")
TARGETS = ("subtype",) + GENES
SUBTYPES = ("serous", "mucinous", "endometrioid", "clearcell")
MUTANT, WILDTYPE, UNKNOWN = "mutant", "wildtype", "unknown"
POLICIES = ("require-embedding", "morphometric-only")
STD_FLOOR = 1e-12

MANIFEST_HEADER = ("patch_id", "case_id", "image_path", "mask_path")
LABELS_HEADER = ("case_id", "subtype") + GENES


@dataclass
class EmbeddingTable:
    dim: int
    rows: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def __contains__(self, patch_id):
        return patch_id in self.rows

    @property
    def names(self) -> list[str]:
        return [f"e{i}" for i in range(self.dim)]


@dataclass(frozen=True)
class CaseLabels:
    subtype: str | None
    mutations: Mapping[str, str]  # gene -> mutant/wildtype; unknown genes absent

    def get(self, target: str) -> str | None:
        if target == "subtype":
            return self.subtype
        return self.mutations.get(target)


@dataclass(frozen=True)
class ManifestRow:
    patch_id: str
    case_id: str
    image_path: str
    mask_path: str


@dataclass
class FusedSample:
    patch_id: str
    case_id: str
    features: np.ndarray
    subtype_label: str | None = None
    mutation_labels: dict[str, str] = field(default_factory=dict)

    def label(self, target: str) -> str | None:
        if target == "subtype":
            return self.subtype_label
        return self.mutation_labels.get(target)


@dataclass
class Dataset:
    samples: list[FusedSample]
    feature_names: list[str]

    def __len__(self):
        return len(self.samples)

    @property
    def X(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, len(self.feature_names)))
        return np.vstack([s.features for s in self.samples])

    def labeled(self, target: str) -> "Dataset":
        """Subset carrying a label for ``target``."""
        return Dataset([s for s in self.samples if s.label(target) is not None], self.feature_names)

    def labels(self, target: str) -> list[str | None]:
        return [s.label(target) for s in self.samples]

    @property
    def patch_ids(self) -> list[str]:
        return [s.patch_id for s in self.samples]

    @property
    def case_ids(self) -> list[str]:
        return [s.case_id for s in self.samples]


# -- readers -----------------------------------------------------------------


def _open_rows(path):
    if not os.path.exists(path):
        raise ParseError("file not found", path)
    fh = open(path, newline="")
    return fh, csv.reader(fh)


def load_embeddings(path) -> EmbeddingTable:
    """Read ``patch_id,e0,...,e{dim-1}``; an empty file gives a dim-0 table."""
    fh, reader = _open_rows(path)
    with fh:
        header = next(reader, None)
        if header is None:
            return EmbeddingTable(0)
        if not header or header[0] != "patch_id":
            raise ParseError("header must start with patch_id", path)
        expected = [f"e{i}" for i in range(len(header) - 1)]
        if header[1:] != expected:
            raise ParseError(f"embedding columns must be e0..e{len(header) - 2}", path)
        dim = len(header) - 1
        rows: dict[str, np.ndarray] = {}
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) - 1 != dim:
                raise DimensionMismatchError(f"expected dim {dim}, got {len(row) - 1}", path, i)
            pid = row[0]
            if pid in rows:
                raise DuplicateIdError(f"duplicate patch_id {pid!r}", path, i)
            try:
                vec = np.array([float(v) for v in row[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(str(exc), path, i) from None
            if not np.all(np.isfinite(vec)):
                raise NonFiniteValueError(f"non-finite value for {pid!r}", path, i)
            rows[pid] = vec
    return EmbeddingTable(dim, rows)


def write_embeddings(path, table: EmbeddingTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patch_id"] + table.names)
        for pid, vec in table.rows.items():
            w.writerow([pid] + [repr(float(v)) for v in vec])


def load_labels(path) -> dict[str, CaseLabels]:
    """Case-level labels.  Subtype strings outside the four standard ones are kept."""
    fh, reader = _open_rows(path)
    out: dict[str, CaseLabels] = {}
    with fh:
        header = next(reader, None)
        if tuple(h.strip().lower() for h in header or ()) != LABELS_HEADER:
            raise ParseError(f"labels header must be {','.join(LABELS_HEADER)}", path)
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(LABELS_HEADER):
                raise ParseError(f"expected {len(LABELS_HEADER)} fields, got {len(row)}", path, i)
            case_id = row[0].strip()
            if case_id in out:
                raise DuplicateIdError(f"duplicate case_id {case_id!r}", path, i)
            subtype = row[1].strip().lower() or None
            if subtype == UNKNOWN:
                subtype = None
            mutations = {}
            for gene, value in zip(GENES, row[2:]):
                value = value.strip().lower()
                if value in (MUTANT, WILDTYPE):
                    mutations[gene] = value
                elif value not in (UNKNOWN, ""):
                    raise ParseError(f"{gene} status must be mutant/wildtype/unknown, got {value!r}", path, i)
            out[case_id] = CaseLabels(subtype, mutations)
    return out


def write_labels(path, labels: Mapping[str, CaseLabels]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABELS_HEADER)
        for case_id, lab in labels.items():
            w.writerow([case_id, lab.subtype or ""] + [lab.mutations.get(g, UNKNOWN) for g in GENES])


def load_manifest(path) -> list[ManifestRow]:
    """Patch manifest; relative image/mask paths resolve against the manifest's directory."""
    fh, reader = _open_rows(path)
    base = os.path.dirname(os.path.abspath(path))
    rows = []
    seen = set()
    with fh:
        header = next(reader, None)
        if tuple(header or ()) != MANIFEST_HEADER:
            raise ParseError(f"manifest header must be {','.join(MANIFEST_HEADER)}", path)
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ParseError(f"expected {len(MANIFEST_HEADER)} fields, got {len(row)}", path, i)
            pid, case_id, image, mask = (v.strip() for v in row)
            if pid in seen:
                raise DuplicateIdError(f"duplicate patch_id {pid!r}", path, i)
            seen.add(pid)
            resolve = lambda p: p if not p or os.path.isabs(p) else os.path.join(base, p)  # noqa: E731
            rows.append(ManifestRow(pid, case_id, resolve(image), resolve(mask)))
    return rows


def write_manifest(path, rows: Iterable[ManifestRow], relative_to=None) -> None:
    base = relative_to or os.path.dirname(os.path.abspath(path))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in rows:
            rel = lambda p: os.path.relpath(p, base) if p else ""  # noqa: E731
            w.writerow([r.patch_id, r.case_id, rel(r.image_path), rel(r.mask_path)])


# -- fusion ------------------------------------------------------------------


def fuse(morph: PatchFeatureVector, embeddings: EmbeddingTable | None, policy: str = "require-embedding") -> np.ndarray:
    """Morphometric statistics followed by the patch's deep embedding."""
    if policy not in POLICIES:
        raise InvalidInputError(f"unknown fusion policy {policy!r}")
    head = np.asarray(morph.vector, dtype=np.float64)
    if policy == "morphometric-only":
        return head.copy()
    if embeddings is None or morph.patch_id not in embeddings:
        raise MissingEmbeddingError(f"no embedding for patch {morph.patch_id!r}")
    return np.concatenate([head, embeddings.rows[morph.patch_id]])


def feature_names(embeddings: EmbeddingTable | None, policy: str) -> list[str]:
    names = list(STAT_COLUMNS)
    if policy == "require-embedding" and embeddings is not None:
        names += embeddings.names
    return names


def build_dataset(
    vectors: Sequence[PatchFeatureVector],
    manifest: Sequence[ManifestRow],
    labels: Mapping[str, CaseLabels],
    embeddings: EmbeddingTable | None,
    policy: str = "require-embedding",
) -> Dataset:
    """Join patch vectors with case labels and embeddings.

    Empty patches are dropped (and counted in the log); patches whose case has
    no labels at all are dropped too.  Sample order follows ``vectors``.
    """
    case_of = {row.patch_id: row.case_id for row in manifest}
    samples = []
    n_empty = n_unlabeled = 0
    for vec in vectors:
        if vec.nucleus_count == 0:
            n_empty += 1
            continue
        if vec.patch_id not in case_of:
            raise InvalidInputError(f"patch {vec.patch_id!r} missing from manifest")
        case_id = case_of[vec.patch_id]
        lab = labels.get(case_id)
        if lab is None or (lab.subtype is None and not lab.mutations):
            n_unlabeled += 1
            continue
        samples.append(
            FusedSample(vec.patch_id, case_id, fuse(vec, embeddings, policy), lab.subtype, dict(lab.mutations))
        )
    if n_empty:
        log.info("dropped %d patches with no accepted nuclei", n_empty)
    if n_unlabeled:
        log.info("dropped %d patches whose case has no labels", n_unlabeled)
    return Dataset(samples, feature_names(embeddings, policy))


def write_fused_csv(path, dataset: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patch_id", "case_id", "subtype"] + list(GENES) + dataset.feature_names)
        for s in dataset.samples:
            w.writerow(
                [s.patch_id, s.case_id, s.subtype_label or ""]
                + [s.mutation_labels.get(g, UNKNOWN) for g in GENES]
                + [repr(float(v)) for v in s.features]
            )


def read_fused_csv(path) -> Dataset:
    fh, reader = _open_rows(path)
    with fh:
        header = next(reader, None)
        fixed = ["patch_id", "case_id", "subtype"] + list(GENES)
        if header is None or header[: len(fixed)] != fixed:
            raise ParseError("unexpected fused-feature header", path)
        names = header[len(fixed):]
        samples = []
        for i, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DimensionMismatchError(f"expected {len(header)} fields, got {len(row)}", path, i)
            try:
                feats = np.array([float(v) for v in row[len(fixed):]])
            except ValueError as exc:
                raise ParseError(str(exc), path, i) from None
            muts = {g: v for g, v in zip(GENES, row[3:len(fixed)]) if v in (MUTANT, WILDTYPE)}
            samples.append(FusedSample(row[0], row[1], feats, row[2] or None, muts))
    return Dataset(samples, names)


# -- standardization ---------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension z-score fitted on training samples only.

    Dimensions whose sample std (n-1) is below ``STD_FLOOR`` map to 0.
    """

    mean: np.ndarray
    std: np.ndarray

    @property
    def constant(self) -> np.ndarray:
        return self.std < STD_FLOOR

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != len(self.mean):
            raise InvalidInputError(f"expected {len(self.mean)} features, got {X.shape[-1]}")
        scale = np.where(self.constant, 1.0, self.std)
        out = (X - self.mean) / scale
        out[..., self.constant] = 0.0
        return out


def standardize_fit(X) -> Standardizer:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidInputError("standardization needs at least 2 training samples")
    return Standardizer(X.mean(axis=0), X.std(axis=0, ddof=1))


def standardize_apply(transform: Standardizer, X) -> np.ndarray:
    return transform.apply(X)


# -- folds -------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    k: int
    assignments: dict[str, int]
    seed: int | None = None

    def fold_of(self, case_id: str) -> int:
        return self.assignments[case_id]

    def cases(self, fold: int) -> list[str]:
        return sorted(c for c, f in self.assignments.items() if f == fold)

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "assignments": dict(sorted(self.assignments.items()))}


def make_stratified_folds(
    samples: Iterable,
    k: int,
    label_selector: Callable[[object], str | None],
    seed: int,
    strict: bool = True,
) -> SplitPlan:
    """Case-grouped stratified folds.

    Each sample needs a ``case_id``; ``label_selector(sample)`` gives its
    stratum label (``None`` excludes the sample).  Cases within each stratum
    are shuffled with a seeded stream and dealt round-robin, the dealing
    position carrying over from one stratum to the next so that total fold
    sizes stay balanced too.
    """
    if k < 2:
        raise InvalidInputError("k must be >= 2")
    case_label: dict[str, str] = {}
    for s in samples:
        lab = label_selector(s)
        if lab is None:
            continue
        prev = case_label.setdefault(s.case_id, lab)
        if prev != lab:
            raise InvalidInputError(f"case {s.case_id!r} has conflicting labels {prev!r} and {lab!r}")
    strata: dict[str, list[str]] = {}
    for case_id, lab in case_label.items():
        strata.setdefault(lab, []).append(case_id)
    if strict:
        small = {lab: len(c) for lab, c in strata.items() if len(c) < k}
        if small:
            raise InfeasibleStratificationError(f"strata smaller than k={k}: {small}")
    bitgen = rngmod.stream(seed, 0x5F01D)
    assignments: dict[str, int] = {}
    pos = 0
    for lab in sorted(strata):
        cases = sorted(strata[lab])
        for j in rngmod.permutation(bitgen, len(cases)):
            assignments[cases[j]] = pos % k
            pos += 1
    return SplitPlan(k, assignments, seed)


def sample_std(values: Sequence[float]) -> float:
    """Sample standard deviation (n-1); 0 for fewer than two values."""
    n = len(values)
    if n < 2:
        return 0.0
    mean = math.fsum(values) / n
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))
