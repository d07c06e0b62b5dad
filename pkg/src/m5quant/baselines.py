"""Comparison estimators: median ratio, ANOVA difference, QRollup and KNNQ."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .data import Dataset, PeptidePair, ProteinCategory, ProteinGroup

log = logging.getLogger(__name__)

QROLLUP_FRACTION = 0.66
KNN_K = 10
MAX_WEIGHT = 1e6  # inverse-distance weight cap for exact ties


class Method(str, Enum):
    MED = "MED"
    ANOVA = "ANOVA"
    Q = "Q"
    KNNQ = "KNNQ"

    def __str__(self) -> str:
        return self.value


_APPLICABLE = {
    Method.MED: {ProteinCategory.MATCHED},
    Method.ANOVA: {ProteinCategory.MATCHED, ProteinCategory.UNMATCHED},
    Method.Q: {ProteinCategory.MATCHED, ProteinCategory.UNMATCHED},
    Method.KNNQ: {ProteinCategory.MATCHED, ProteinCategory.UNMATCHED, ProteinCategory.ONE_SIDED},
}


def applicable(method: Method, category: ProteinCategory) -> bool:
    return category in _APPLICABLE[Method(method)]


@dataclass(frozen=True)
class PointEstimate:
    protein_id: str
    method: Method
    estimate: Optional[float]
    category: ProteinCategory

    @property
    def present(self) -> bool:
        return self.estimate is not None


def median_ratio(protein: ProteinGroup) -> PointEstimate:
    diffs = [p.y_a - p.y_b for p in protein.peptides if p.matched]
    est = float(np.median(diffs)) if diffs else None
    return PointEstimate(protein.protein_id, Method.MED, est, protein.category)


def anova_estimate(protein: ProteinGroup) -> PointEstimate:
    ya, yb = protein.observed(0), protein.observed(1)
    est = float(ya.mean() - yb.mean()) if ya.size and yb.size else None
    return PointEstimate(protein.protein_id, Method.ANOVA, est, protein.category)


def _top_mean(peptides, attr: str, fraction: float) -> Optional[float]:
    obs = [(getattr(p, attr), p.peptide_id) for p in peptides if getattr(p, attr) is not None]
    if not obs:
        return None
    # stable order: intensity descending, then peptide id
    obs.sort(key=lambda t: (-t[0], t[1]))
    keep = max(1, math.ceil(fraction * len(obs) - 1e-9))
    return float(np.mean([v for v, _ in obs[:keep]]))


def qrollup(protein: ProteinGroup, fraction: float = QROLLUP_FRACTION,
            method: Method = Method.Q, category: Optional[ProteinCategory] = None) -> PointEstimate:
    """Top-``fraction`` mean of sample A minus that of sample B."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    ma = _top_mean(protein.peptides, "y_a", fraction)
    mb = _top_mean(protein.peptides, "y_b", fraction)
    est = ma - mb if ma is not None and mb is not None else None
    return PointEstimate(protein.protein_id, method, est, category or protein.category)


def _weighted_neighbors(tree: cKDTree, query: np.ndarray, k: int):
    """Indices and normalized inverse-distance weights of the k nearest."""
    k = min(k, tree.n)
    dist, idx = tree.query(query.reshape(-1, 1), k=k)
    dist = np.asarray(dist).reshape(len(query), k)
    idx = np.asarray(idx).reshape(len(query), k)
    w = 1.0 / np.maximum(dist, 1.0 / MAX_WEIGHT)
    return idx, w / w.sum(axis=1, keepdims=True)


def knn_impute(ds: Dataset, k: int = KNN_K) -> Dataset:
    """Weighted k-nearest-neighbour completion of single and double gaps.

    Neighbours are the dataset's matched peptides.  A peptide missing one
    side is matched on its observed intensity against the same side of the
    neighbours; a peptide missing both is matched on its protein's observed
    mean against neighbour midpoints.  Observed values are never changed.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    tab = ds.table()
    y, obs = tab.y, tab.observed
    complete = obs.all(axis=1)
    if complete.all():
        return ds
    n_cand = int(complete.sum())
    if n_cand == 0:
        log.warning("knn_impute: no matched peptides to borrow from; values left missing")
        return ds
    if n_cand < k:
        log.warning("knn_impute: only %d candidate neighbours (k=%d); using all", n_cand, k)
    cand = y[complete]
    out = y.copy()

    for side in (0, 1):
        other = 1 - side
        rows = np.flatnonzero(~obs[:, side] & obs[:, other])
        if rows.size:
            idx, w = _weighted_neighbors(cKDTree(cand[:, other:other + 1]), y[rows, other], k)
            out[rows, side] = (w * cand[idx, side]).sum(axis=1)

    both = np.flatnonzero(~obs.any(axis=1))
    if both.size:
        sums = np.bincount(tab.pep_protein, weights=np.where(obs, y, 0.0).sum(axis=1),
                           minlength=tab.n_proteins)
        counts = np.bincount(tab.pep_protein, weights=obs.sum(axis=1), minlength=tab.n_proteins)
        prot = tab.pep_protein[both]
        has = counts[prot] > 0
        rows = both[has]
        if rows.size:
            target = sums[prot[has]] / counts[prot[has]]
            idx, w = _weighted_neighbors(cKDTree(cand.mean(axis=1, keepdims=True)), target, k)
            out[rows] = np.einsum("rk,rkc->rc", w, cand[idx])

    groups = []
    start = 0
    for g in ds.proteins:
        peps = []
        for j, p in enumerate(g.peptides, start):
            ya = None if np.isnan(out[j, 0]) else float(out[j, 0])
            yb = None if np.isnan(out[j, 1]) else float(out[j, 1])
            peps.append(p if obs[j].all() else PeptidePair(p.protein_id, p.peptide_id, ya, yb))
        start += g.m_i
        groups.append(ProteinGroup(g.protein_id, tuple(peps)))
    return ds.with_proteins(groups, f"knn_impute k={k}")


def knnq(ds: Dataset, k: int = KNN_K) -> list:
    imputed = knn_impute(ds, k)
    cats = {g.protein_id: g.category for g in ds.proteins}
    out = []
    for g in imputed.proteins:
        cat = cats[g.protein_id]
        if applicable(Method.KNNQ, cat):
            out.append(qrollup(g, method=Method.KNNQ, category=cat))
        else:
            out.append(PointEstimate(g.protein_id, Method.KNNQ, None, cat))
    return out


_PER_PROTEIN = {Method.MED: median_ratio, Method.ANOVA: anova_estimate, Method.Q: qrollup}


def estimate(ds: Dataset, method: Method, k: int = KNN_K) -> list:
    """PointEstimates for every protein; inapplicable ones carry ``None``."""
    method = Method(method)
    if method is Method.KNNQ:
        return knnq(ds, k)
    fn = _PER_PROTEIN[method]
    out = []
    for g in ds.proteins:
        pe = fn(g)
        if pe.present and not applicable(method, g.category):
            pe = PointEstimate(g.protein_id, method, None, g.category)
        out.append(pe)
    return out
