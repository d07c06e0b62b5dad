"""Scoring and the simulation, sensitivity and misspecification drivers."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import baselines
from .data import (Dataset, ProteinCategory, complete_case_reduce, drop_missing_proteins)
from .gibbs import ChainConfig, Model, run_chain
from .simgen import (PROBIT_LINEAR, MissingnessMechanism, SimulationConfig, apply_mechanism,
                     calibrate_mechanism, generate_dataset, generate_latent, inject_missingness,
                     sample_proteins)

log = logging.getLogger(__name__)

METHODS = ("M5", "M3", "MED", "ANOVA", "Q", "KNNQ")
ALL = "All"
CATEGORIES = (ProteinCategory.MATCHED.value, ProteinCategory.UNMATCHED.value,
              ProteinCategory.ONE_SIDED.value, ALL)
MISSING_BINS = ((0.0, 25.0, "[0,25)"), (25.0, 50.0, "[25,50)"), (50.0, 75.0, "[50,75)"),
                (75.0, 100.0, "[75,100]"))
SENSITIVITY_LEVELS = (0.01, 0.05, 0.10, 0.20, 0.30, 0.40, 0.50)
SCORE_HEADER = ["replicate", "method", "category", "missing_bin", "level", "mechanism",
                "mse", "correlation", "n"]


@dataclass(frozen=True)
class MethodScore:
    method: str
    category: str
    missing_bin: Optional[str]
    mse: float
    correlation: float
    n_proteins: int
    replicate: int = 0
    level: Optional[float] = None
    mechanism: Optional[str] = None


@dataclass
class StudyResult:
    scores: list
    failures: list = field(default_factory=list)  # (replicate, method, level, mechanism, message)
    metadata: dict = field(default_factory=dict)


def missing_bin(percent: float) -> str:
    for lo, hi, label in MISSING_BINS:
        if lo <= percent < hi:
            return label
    return MISSING_BINS[-1][2]


def mse_and_corr(est: np.ndarray, ref: np.ndarray):
    err = est - ref
    mse = float(np.mean(err * err))
    if est.size < 2 or np.ptp(est) == 0 or np.ptp(ref) == 0:
        return mse, float("nan")
    return mse, float(np.clip(np.corrcoef(est, ref)[0, 1], -1.0, 1.0))


def score_replicate(estimates: dict, truth: dict, categories: dict, missing_pct: dict,
                    replicate: int = 0, level=None, mechanism=None) -> list:
    """Score ``{method: {protein_id: estimate}}`` against ``truth``.

    Rows cover each method by category (plus "All"), and by missingness bin
    within "All".  Empty cells are omitted.
    """
    out = []
    for method in sorted(estimates, key=_method_order):
        est = {p: v for p, v in estimates[method].items()
               if v is not None and p in truth and math.isfinite(v)}
        pids = sorted(est)
        cells = [(c, None, [p for p in pids if categories[p] == c]) for c in CATEGORIES[:-1]]
        cells.append((ALL, None, pids))
        cells += [(ALL, label, [p for p in pids if missing_bin(missing_pct[p]) == label])
                  for _, _, label in MISSING_BINS]
        for cat, b, sel in cells:
            if not sel:
                log.debug("no applicable proteins for %s/%s/%s", method, cat, b)
                continue
            e = np.array([est[p] for p in sel])
            t = np.array([truth[p] for p in sel])
            mse, corr = mse_and_corr(e, t)
            out.append(MethodScore(method, cat, b, mse, corr, len(sel), replicate, level, mechanism))
    return out


def _method_order(m: str):
    return (METHODS.index(m), m) if m in METHODS else (len(METHODS), m)


def fit_methods(ds: Dataset, methods: Sequence[str], chain_cfg: ChainConfig, k: int = baselines.KNN_K):
    """Run each method on ``ds``; returns ({method: {pid: est}}, [(method, error)])."""
    fits, failures = {}, []
    for method in methods:
        try:
            if method in ("M5", "M3"):
                res = run_chain(ds, replace(chain_cfg, model=Model(method)))
                fits[method] = {s.protein_id: s.post_mean for s in res.summaries}
            else:
                fits[method] = {pe.protein_id: pe.estimate for pe in baselines.estimate(ds, method, k)}
        except Exception as exc:  # one failed method must not sink the replicate
            log.warning("method %s failed: %s", method, exc)
            failures.append((method, f"{type(exc).__name__}: {exc}"))
    return fits, failures


def _protein_meta(ds: Dataset):
    cats = {g.protein_id: g.category.value for g in ds.proteins}
    pct = {g.protein_id: 100.0 * g.missing_fraction for g in ds.proteins}
    return cats, pct


def replicate_seeds(seed: int, replicate: int):
    """(data Generator, chain seed) for one replicate, independent of run order."""
    ss = np.random.SeedSequence([seed, replicate])
    data_ss, chain_ss = ss.spawn(2)
    return np.random.default_rng(data_ss), int(chain_ss.generate_state(1, np.uint64)[0] >> 1)


def _check_methods(methods):
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown method(s) {bad}; choose from {METHODS}")


def _map(fn, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _simulation_replicate(job):
    cfg, methods, chain_cfg, r, keep_data = job
    rng, chain_seed = replicate_seeds(cfg.seed, r)
    ds, truth = generate_dataset(cfg, rng)
    ds = drop_missing_proteins(ds)
    cats, pct = _protein_meta(ds)
    fits, failed = fit_methods(ds, methods, replace(chain_cfg, seed=chain_seed))
    scores = score_replicate(fits, truth, cats, pct, replicate=r)
    log.info("replicate %d done (%d proteins)", r, len(ds))
    return scores, [(r, m, None, None, msg) for m, msg in failed], (ds, truth) if keep_data else None


def run_simulation_study(cfg: SimulationConfig, methods: Sequence[str] = METHODS,
                         chain_cfg: ChainConfig = ChainConfig(), workers: int = 1,
                         keep_data: bool = False) -> StudyResult:
    _check_methods(methods)
    jobs = [(cfg, tuple(methods), chain_cfg, r, keep_data) for r in range(cfg.n_replicates)]
    result = StudyResult([], [], {"seed": cfg.seed, "n_replicates": cfg.n_replicates,
                                  "n_proteins": cfg.n_proteins, "mechanism": cfg.mechanism.to_dict()})
    data = []
    for scores, failed, kept in _map(_simulation_replicate, jobs, workers):
        result.scores += scores
        result.failures += failed
        data.append(kept)
    if keep_data:
        result.metadata["datasets"] = data
    return result


def reference_ratios(ds: Dataset) -> dict:
    """Per-protein mean of matched pair differences."""
    out = {}
    for g in ds.proteins:
        d = [p.y_a - p.y_b for p in g.peptides if p.matched]
        if d:
            out[g.protein_id] = float(np.mean(d))
    return out


def _sensitivity_level(job):
    base_ds, reference, ref_y, level, methods, chain_cfg, seed, b, free, i = job
    rng, chain_seed = replicate_seeds(seed, 1000 + i)
    meta = {"level": level}
    if level > 0:
        mech = calibrate_mechanism(MissingnessMechanism(PROBIT_LINEAR, 0.0, b), ref_y, level, free=free)
        ds = inject_missingness(base_ds, mech, rng)
        meta.update(a=mech.a, b=mech.b, realized_missing=ds.n_missing / ds.n_slots)
    else:
        ds = base_ds
        meta.update(a=None, b=None, realized_missing=0.0)
    meta["chain_seed"] = chain_seed
    ds = drop_missing_proteins(ds)
    cats, pct = _protein_meta(ds)
    fits, failed = fit_methods(ds, methods, replace(chain_cfg, seed=chain_seed))
    scores = score_replicate(fits, reference, cats, pct, replicate=0, level=level)
    return scores, [(0, m, level, None, msg) for m, msg in failed], meta


def run_sensitivity(ds: Dataset, levels: Sequence[float] = SENSITIVITY_LEVELS,
                    methods: Sequence[str] = METHODS, chain_cfg: ChainConfig = ChainConfig(),
                    sample: int = 500, seed: int = 0, b: float = 0.5, free: str = "a",
                    workers: int = 1) -> StudyResult:
    """Inject calibrated missingness into a complete-case subsample and score
    every method against the per-protein mean pair difference."""
    _check_methods(methods)
    for lv in levels:
        if not 0.0 <= lv < 1.0:
            raise ValueError(f"missingness level {lv} outside [0, 1)")
    cc = complete_case_reduce(ds)
    if len(cc) < sample:
        raise ValueError(f"only {len(cc)} complete-case proteins; {sample} required")
    sel_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    base = sample_proteins(cc, sample, sel_rng)
    reference = reference_ratios(base)
    ref_y = base.table().y.ravel()
    jobs = [(base, reference, ref_y, float(lv), tuple(methods), chain_cfg, seed, b, free, i)
            for i, lv in enumerate(levels)]
    result = StudyResult([], [], {"seed": seed, "sample": sample, "free_parameter": free,
                                  "fixed_slope" if free == "a" else "fixed_intercept": b,
                                  "selected_proteins": [g.protein_id for g in base.proteins],
                                  "levels": []})
    for scores, failed, meta in _map(_sensitivity_level, jobs, workers):
        result.scores += scores
        result.failures += failed
        result.metadata["levels"].append(meta)
    return result


def _misspec_replicate(job):
    cfg, mechanisms, methods, chain_cfg, r = job
    rng, chain_seed = replicate_seeds(cfg.seed, r)
    latent = generate_latent(cfg, rng)
    truth = latent.truth()
    scores, failures = [], []
    for name in sorted(mechanisms):
        ds = drop_missing_proteins(apply_mechanism(latent, mechanisms[name], rng))
        cats, pct = _protein_meta(ds)
        fits, failed = fit_methods(ds, methods, replace(chain_cfg, seed=chain_seed))
        scores += score_replicate(fits, truth, cats, pct, replicate=r, mechanism=name)
        failures += [(r, m, None, name, msg) for m, msg in failed]
    return scores, failures


def run_misspec_study(cfg: SimulationConfig, mechanisms: dict, chain_cfg: ChainConfig = ChainConfig(),
                      methods: Sequence[str] = ("M5",), workers: int = 1) -> StudyResult:
    """One latent dataset per replicate, overlaid with each mechanism in turn;
    the working model is always the probit-linear one."""
    _check_methods(methods)
    jobs = [(cfg, dict(mechanisms), tuple(methods), chain_cfg, r) for r in range(cfg.n_replicates)]
    result = StudyResult([], [], {"seed": cfg.seed, "n_replicates": cfg.n_replicates,
                                  "mechanisms": {k: v.to_dict() for k, v in mechanisms.items()}})
    for scores, failed in _map(_misspec_replicate, jobs, workers):
        result.scores += scores
        result.failures += failed
    return result


@dataclass(frozen=True)
class AggregateScore:
    method: str
    category: str
    missing_bin: Optional[str]
    level: Optional[float]
    mechanism: Optional[str]
    mean_mse: float  # mean of per-replicate MSEs
    pooled_mse: float  # protein-weighted
    mean_correlation: float
    n_replicates: int
    n_proteins: int


def aggregate(scores: Sequence[MethodScore]) -> list:
    groups: dict = {}
    for s in scores:
        groups.setdefault((s.method, s.category, s.missing_bin, s.level, s.mechanism), []).append(s)
    out = []
    for key in sorted(groups, key=lambda k: (_method_order(k[0]), CATEGORIES.index(k[1])
                                              if k[1] in CATEGORIES else 9, k[2] or "",
                                              -1 if k[3] is None else k[3], k[4] or "")):
        rows = groups[key]
        n = np.array([s.n_proteins for s in rows], dtype=float)
        mse = np.array([s.mse for s in rows])
        corr = np.array([s.correlation for s in rows])
        corr = corr[np.isfinite(corr)]
        out.append(AggregateScore(*key, float(mse.mean()), float((mse * n).sum() / n.sum()),
                                  float(corr.mean()) if corr.size else float("nan"),
                                  len(rows), int(n.sum())))
    return out


def mean_mse(scores, method: str, category: str = ALL, missing_bin=None, level=None, mechanism=None):
    vals = [s.mse for s in scores if s.method == method and s.category == category
            and s.missing_bin == missing_bin and s.level == level and s.mechanism == mechanism]
    return float(np.mean(vals)) if vals else float("nan")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_scores(scores: Sequence[MethodScore], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_HEADER)
        for s in scores:
            w.writerow([s.replicate, s.method, s.category, _fmt(s.missing_bin), _fmt(s.level),
                        _fmt(s.mechanism), _fmt(s.mse), _fmt(s.correlation), s.n_proteins])


def read_scores(path) -> list:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SCORE_HEADER:
            raise ValueError(f"{path}: not a score table")
        for row in reader:
            out.append(MethodScore(
                method=row["method"], category=row["category"],
                missing_bin=row["missing_bin"] or None, mse=float(row["mse"]),
                correlation=float(row["correlation"]), n_proteins=int(row["n"]),
                replicate=int(row["replicate"]),
                level=float(row["level"]) if row["level"] else None,
                mechanism=row["mechanism"] or None))
    return out
