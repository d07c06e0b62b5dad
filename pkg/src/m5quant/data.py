"""Peptide/protein domain types, categorization and CSV I/O.

Intensities are log-scale throughout.  The canonical input file is::

    protein_id,peptide_id,intensity_a,intensity_b

with an empty field meaning "not observed".
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .rng import stable_key

log = logging.getLogger(__name__)

CANONICAL_HEADER = ["protein_id", "peptide_id", "intensity_a", "intensity_b"]
ESTIMATES_HEADER = [
    "protein_id",
    "category",
    "method",
    "estimate",
    "posterior_sd",
    "ci_lower",
    "ci_upper",
    "n_peptides",
    "n_matched_pairs",
]


class IngestionError(Exception):
    """Input file cannot be turned into a Dataset."""


class ProteinCategory(str, Enum):
    MATCHED = "Matched"
    UNMATCHED = "Unmatched"
    ONE_SIDED = "OneSided"
    MISSING = "Missing"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class ObservationIndicator:
    r_a: bool
    r_b: bool


@dataclass(frozen=True)
class PeptidePair:
    protein_id: str
    peptide_id: str
    y_a: Optional[float] = None
    y_b: Optional[float] = None

    def __post_init__(self):
        for v in (self.y_a, self.y_b):
            if v is not None and not math.isfinite(v):
                raise ValueError(f"non-finite intensity for {self.protein_id}/{self.peptide_id}")

    @property
    def indicator(self) -> ObservationIndicator:
        return ObservationIndicator(self.y_a is not None, self.y_b is not None)

    @property
    def matched(self) -> bool:
        return self.y_a is not None and self.y_b is not None

    @property
    def n_observed(self) -> int:
        return (self.y_a is not None) + (self.y_b is not None)


def categorize(peptides: Iterable[PeptidePair]) -> ProteinCategory:
    has_a = has_b = False
    for p in peptides:
        if p.matched:
            return ProteinCategory.MATCHED
        has_a |= p.y_a is not None
        has_b |= p.y_b is not None
    if has_a and has_b:
        return ProteinCategory.UNMATCHED
    if has_a or has_b:
        return ProteinCategory.ONE_SIDED
    return ProteinCategory.MISSING


@dataclass(frozen=True)
class ProteinGroup:
    protein_id: str
    peptides: tuple
    category: ProteinCategory = field(init=False)

    def __post_init__(self):
        if not self.peptides:
            raise ValueError(f"protein {self.protein_id} has no peptides")
        object.__setattr__(self, "peptides", tuple(self.peptides))
        object.__setattr__(self, "category", categorize(self.peptides))

    @property
    def m_i(self) -> int:
        return len(self.peptides)

    @property
    def n_matched_pairs(self) -> int:
        return sum(p.matched for p in self.peptides)

    @property
    def missing_fraction(self) -> float:
        return 1.0 - sum(p.n_observed for p in self.peptides) / (2 * self.m_i)

    def observed(self, side: int) -> np.ndarray:
        """Observed intensities of sample A (side 0) or B (side 1)."""
        attr = "y_a" if side == 0 else "y_b"
        return np.array([getattr(p, attr) for p in self.peptides if getattr(p, attr) is not None])


@dataclass(frozen=True)
class PeptideTable:
    """Flat array view of a Dataset, ordered as the Dataset is."""

    protein_ids: list
    peptide_ids: list
    pep_protein: np.ndarray  # protein index of each peptide
    y: np.ndarray  # (n_peptides, 2), NaN where missing
    observed: np.ndarray  # (n_peptides, 2) bool
    m: np.ndarray  # peptides per protein
    protein_keys: np.ndarray
    peptide_keys: np.ndarray

    @property
    def n_proteins(self) -> int:
        return len(self.protein_ids)


@dataclass(frozen=True)
class Dataset:
    proteins: tuple
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "proteins", tuple(self.proteins))
        seen = set()
        for g in self.proteins:
            if g.protein_id in seen:
                raise ValueError(f"duplicate protein_id {g.protein_id!r}")
            seen.add(g.protein_id)
            peps = [p.peptide_id for p in g.peptides]
            if len(set(peps)) != len(peps):
                raise ValueError(f"duplicate peptide within protein {g.protein_id!r}")

    def __len__(self) -> int:
        return len(self.proteins)

    def __iter__(self):
        return iter(self.proteins)

    @classmethod
    def from_pairs(cls, pairs: Iterable[PeptidePair], provenance: str = "") -> "Dataset":
        groups: dict = {}
        for p in pairs:
            groups.setdefault(p.protein_id, []).append(p)
        return cls(tuple(ProteinGroup(pid, tuple(ps)) for pid, ps in groups.items()), provenance)

    def pairs(self):
        for g in self.proteins:
            yield from g.peptides

    def by_id(self) -> dict:
        return {g.protein_id: g for g in self.proteins}

    def category_counts(self) -> dict:
        counts = {c: 0 for c in ProteinCategory}
        for g in self.proteins:
            counts[g.category] += 1
        return counts

    @property
    def n_slots(self) -> int:
        return 2 * sum(g.m_i for g in self.proteins)

    @property
    def n_missing(self) -> int:
        return sum(2 - p.n_observed for p in self.pairs())

    def with_proteins(self, proteins: Sequence[ProteinGroup], note: str) -> "Dataset":
        prov = f"{self.provenance}; {note}" if self.provenance else note
        return Dataset(tuple(proteins), prov)

    def table(self) -> PeptideTable:
        prot_ids, pep_ids, pep_prot, ys, m = [], [], [], [], []
        pkeys, qkeys = [], []
        for i, g in enumerate(self.proteins):
            prot_ids.append(g.protein_id)
            pkeys.append(stable_key(g.protein_id))
            m.append(g.m_i)
            for p in g.peptides:
                pep_ids.append(p.peptide_id)
                pep_prot.append(i)
                ys.append((np.nan if p.y_a is None else p.y_a, np.nan if p.y_b is None else p.y_b))
                qkeys.append(stable_key(g.protein_id, p.peptide_id))
        y = np.array(ys, dtype=np.float64).reshape(-1, 2)
        return PeptideTable(
            protein_ids=prot_ids,
            peptide_ids=pep_ids,
            pep_protein=np.array(pep_prot, dtype=np.intp),
            y=y,
            observed=~np.isnan(y),
            m=np.array(m, dtype=np.intp),
            protein_keys=np.array(pkeys, dtype=np.uint64),
            peptide_keys=np.array(qkeys, dtype=np.uint64),
        )


def _parse_intensity(text: str, log2: bool, where: str) -> Optional[float]:
    text = text.strip()
    if text == "":
        return None
    v = float(text)  # ValueError propagates to the row handler
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {text!r}")
    if log2:
        if v <= 0:
            log.warning("%s: non-positive raw intensity %r treated as missing", where, text)
            return None
        return math.log2(v)
    return v


def ingest_csv(path, log2: bool = False) -> Dataset:
    """Read a canonical peptide CSV.

    Rows with unparseable intensities are skipped and reported by line
    number; a bad header, a duplicate (protein, peptide) key or an empty
    result is fatal.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"input file not found: {path}")
    pairs, rejected, seen = [], [], set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CANONICAL_HEADER:
            raise IngestionError(
                f"{path}: header must be {','.join(CANONICAL_HEADER)}, got {header!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                rejected.append(lineno)
                continue
            prot, pep = row[0].strip(), row[1].strip()
            if not prot or not pep:
                rejected.append(lineno)
                continue
            key = (prot, pep)
            if key in seen:
                raise IngestionError(f"{path}:{lineno}: duplicate key protein={prot!r} peptide={pep!r}")
            try:
                ya = _parse_intensity(row[2], log2, f"{path}:{lineno}")
                yb = _parse_intensity(row[3], log2, f"{path}:{lineno}")
            except ValueError:
                rejected.append(lineno)
                continue
            seen.add(key)
            pairs.append(PeptidePair(prot, pep, ya, yb))
    if rejected:
        log.warning("%s: rejected %d rows with unparseable fields (lines %s)", path, len(rejected),
                    ",".join(map(str, rejected[:50])) + (" ..." if len(rejected) > 50 else ""))
    if not pairs:
        raise IngestionError(f"{path}: no usable rows")
    prov = f"source={path}"
    if log2:
        prov += "; log2-transformed"
    if rejected:
        prov += f"; rejected_rows={len(rejected)}"
    return Dataset.from_pairs(pairs, prov)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(ds: Dataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANONICAL_HEADER)
        for p in ds.pairs():
            w.writerow([p.protein_id, p.peptide_id, _fmt(p.y_a), _fmt(p.y_b)])


def drop_missing_proteins(ds: Dataset) -> Dataset:
    keep = [g for g in ds.proteins if g.category is not ProteinCategory.MISSING]
    removed = len(ds.proteins) - len(keep)
    if not removed:
        return ds
    log.info("removed %d proteins with no observed intensities", removed)
    return ds.with_proteins(keep, f"dropped_missing={removed}")


def complete_case_reduce(ds: Dataset) -> Dataset:
    """Keep only peptides observed in both samples; drop emptied proteins."""
    keep = []
    for g in ds.proteins:
        peps = tuple(p for p in g.peptides if p.matched)
        if len(peps) == len(g.peptides):
            keep.append(g)
        elif peps:
            keep.append(ProteinGroup(g.protein_id, peps))
    if len(keep) == len(ds.proteins) and all(a is b for a, b in zip(keep, ds.proteins)):
        return ds
    return ds.with_proteins(keep, "complete_case")


@dataclass(frozen=True)
class EstimateRow:
    protein_id: str
    category: ProteinCategory
    method: str
    estimate: Optional[float]
    posterior_sd: Optional[float] = None
    ci_lower: Optional[float] = None
    ci_upper: Optional[float] = None
    n_peptides: int = 0
    n_matched_pairs: int = 0


def write_estimates(rows: Iterable[EstimateRow], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESTIMATES_HEADER)
        for r in rows:
            w.writerow([
                r.protein_id, str(r.category), r.method, _fmt(r.estimate), _fmt(r.posterior_sd),
                _fmt(r.ci_lower), _fmt(r.ci_upper), r.n_peptides, r.n_matched_pairs,
            ])


def read_estimates(path) -> list:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ESTIMATES_HEADER:
            raise IngestionError(f"{path}: not an estimates file")
        for row in reader:
            num = {k: (float(row[k]) if row[k] else None)
                   for k in ("estimate", "posterior_sd", "ci_lower", "ci_upper")}
            out.append(EstimateRow(
                protein_id=row["protein_id"],
                category=ProteinCategory(row["category"]),
                method=row["method"],
                n_peptides=int(row["n_peptides"]),
                n_matched_pairs=int(row["n_matched_pairs"]),
                **num,
            ))
    return out
