"""Synthetic datasets, missingness mechanisms and their calibration."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit, ndtr

from .data import Dataset, PeptidePair, ProteinGroup
from .gibbs import SIMULATION_PARAMS, ModelParams

log = logging.getLogger(__name__)

PROBIT_LINEAR = "probit_linear"
PROBIT_QUADRATIC = "probit_quadratic"
LOGIT_LINEAR = "logit_linear"
KINDS = (PROBIT_LINEAR, PROBIT_QUADRATIC, LOGIT_LINEAR)

# logistic slope matching the probit slope at the curve's midpoint
LOGIT_SLOPE_FACTOR = 1.70


class CalibrationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class MissingnessMechanism:
    """P(observed | y) = link(a + b*y + c*(y - center)**2)."""

    kind: str = PROBIT_LINEAR
    a: float = SIMULATION_PARAMS.a
    b: float = SIMULATION_PARAMS.b
    c: float = 0.0
    center: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown mechanism kind {self.kind!r}")
        if self.kind != PROBIT_QUADRATIC and self.c != 0.0:
            raise ValueError("quadratic term only allowed for probit_quadratic")

    def linear_predictor(self, y):
        y = np.asarray(y, dtype=np.float64)
        return self.a + self.b * y + self.c * (y - self.center) ** 2

    def p_observed(self, y):
        eta = self.linear_predictor(y)
        return expit(eta) if self.kind == LOGIT_LINEAR else ndtr(eta)

    def expected_missing(self, y) -> float:
        return float(np.mean(1.0 - self.p_observed(y)))

    def is_monotone(self, lo: float, hi: float, n: int = 2001) -> bool:
        p = self.p_observed(np.linspace(lo, hi, n))
        return bool(np.all(np.diff(p) >= 0))

    def to_dict(self) -> dict:
        return asdict(self)


def observe_all() -> MissingnessMechanism:
    return MissingnessMechanism(PROBIT_LINEAR, a=40.0, b=0.0)


def observe_none() -> MissingnessMechanism:
    return MissingnessMechanism(PROBIT_LINEAR, a=-40.0, b=0.0)


@dataclass(frozen=True)
class SimulationConfig:
    n_proteins: int = 500
    peptide_counts: tuple = tuple(range(1, 13))
    theta0: ModelParams = SIMULATION_PARAMS
    mechanism: MissingnessMechanism = field(default_factory=MissingnessMechanism)
    n_replicates: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_proteins < 1:
            raise ValueError("n_proteins must be >= 1")
        if not self.peptide_counts or min(self.peptide_counts) < 1:
            raise ValueError("peptide count support must be non-empty and positive")


@dataclass(frozen=True)
class LatentData:
    """Complete (pre-missingness) simulated intensities."""

    protein_ids: list
    peptide_ids: list
    pep_protein: np.ndarray
    mu: np.ndarray
    alpha: np.ndarray
    y: np.ndarray  # (n_peptides, 2)

    def truth(self) -> dict:
        return dict(zip(self.protein_ids, map(float, self.mu)))


def generate_latent(cfg: SimulationConfig, rng: np.random.Generator) -> LatentData:
    th = cfg.theta0
    n = cfg.n_proteins
    mu = rng.normal(th.beta_mu, math.sqrt(th.tau), n)
    m = rng.choice(np.asarray(cfg.peptide_counts), size=n, replace=True)
    pep_protein = np.repeat(np.arange(n), m)
    alpha = rng.normal(th.beta_alpha, math.sqrt(th.xi), pep_protein.size)
    eps = rng.normal(0.0, math.sqrt(th.sigma), (pep_protein.size, 2))
    half = mu[pep_protein] / 2.0
    y = np.column_stack([alpha + half, alpha - half]) + eps
    width = len(str(n))
    pids = [f"P{i + 1:0{width}d}" for i in range(n)]
    peps = []
    for i, mi in enumerate(m):
        peps.extend(f"{pids[i]}_{j + 1:02d}" for j in range(mi))
    return LatentData(pids, peps, pep_protein, mu, alpha, y)


def apply_mechanism(latent: LatentData, mech: MissingnessMechanism, rng: np.random.Generator,
                    provenance: str = "") -> Dataset:
    observed = rng.random(latent.y.shape) < mech.p_observed(latent.y)
    return _to_dataset(latent.protein_ids, latent.peptide_ids, latent.pep_protein,
                       latent.y, observed, provenance)


def _to_dataset(protein_ids, peptide_ids, pep_protein, y, observed, provenance) -> Dataset:
    groups: list = [[] for _ in protein_ids]
    for j, (i, pep) in enumerate(zip(pep_protein, peptide_ids)):
        ya = float(y[j, 0]) if observed[j, 0] else None
        yb = float(y[j, 1]) if observed[j, 1] else None
        groups[i].append(PeptidePair(protein_ids[i], pep, ya, yb))
    return Dataset(tuple(ProteinGroup(pid, tuple(g)) for pid, g in zip(protein_ids, groups)), provenance)


def generate_dataset(cfg: SimulationConfig, rng: np.random.Generator):
    """Simulate one replicate; returns (dataset, {protein_id: true mu})."""
    latent = generate_latent(cfg, rng)
    ds = apply_mechanism(latent, cfg.mechanism, rng, provenance=f"simulated seed={cfg.seed}")
    return ds, latent.truth()


def reference_intensities(cfg: SimulationConfig, n_proteins: int = 20000, seed: int = 0) -> np.ndarray:
    """Monte-Carlo sample of complete intensities under cfg (for calibration)."""
    latent = generate_latent(replace(cfg, n_proteins=n_proteins), np.random.default_rng(seed))
    return latent.y.ravel()


def calibrate_mechanism(
    base: MissingnessMechanism,
    reference_y,
    target: float,
    tolerance: float = 0.005,
    free: str = "a",
    bounds: tuple = (-50.0, 50.0),
    max_iter: int = 200,
) -> MissingnessMechanism:
    """Bisect one coefficient so the expected missing fraction over
    ``reference_y`` hits ``target``."""
    if not 0.0 < target < 1.0:
        raise ValueError("target missing rate must lie in (0, 1)")
    if free not in ("a", "b"):
        raise ValueError("free must be 'a' or 'b'")
    y = np.asarray(reference_y, dtype=np.float64).ravel()

    def rate(v):
        return replace(base, **{free: v}).expected_missing(y)

    lo, hi = bounds
    f_lo, f_hi = rate(lo) - target, rate(hi) - target
    if f_lo * f_hi > 0:
        rates = sorted((f_lo + target, f_hi + target))
        raise CalibrationError(
            f"target {target} unreachable by varying {free} in {bounds}; achievable range {rates}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = rate(mid) - target
        if f_mid == 0 or hi - lo < 1e-12:
            break
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    mech = replace(base, **{free: 0.5 * (lo + hi)})
    achieved = mech.expected_missing(y)
    if abs(achieved - target) > tolerance:
        raise CalibrationError(f"calibration reached {achieved:.4f}, target {target} +/- {tolerance}")
    return mech


def misspecification_mechanisms(reference_y, target: float = 0.33,
                                probit_slope: float = SIMULATION_PARAMS.b) -> dict:
    """The three same-shape, different-family mechanisms, each calibrated to ``target``.

    The logit slope matches the probit slope's local derivative; the
    quadratic term, centred at the mean intensity, is the largest that keeps
    the observation curve monotone over mean +/- 6 SD, steepening it above
    the mean.
    """
    y = np.asarray(reference_y, dtype=np.float64).ravel()
    center, sd = float(np.mean(y)), float(np.std(y))
    bases = {
        PROBIT_LINEAR: MissingnessMechanism(PROBIT_LINEAR, 0.0, probit_slope),
        PROBIT_QUADRATIC: MissingnessMechanism(
            PROBIT_QUADRATIC, 0.0, probit_slope, c=probit_slope / (12.0 * sd), center=center),
        LOGIT_LINEAR: MissingnessMechanism(LOGIT_LINEAR, 0.0, LOGIT_SLOPE_FACTOR * probit_slope),
    }
    out = {}
    for name, base in bases.items():
        mech = calibrate_mechanism(base, y, target)
        if not mech.is_monotone(center - 6 * sd, center + 6 * sd):
            raise CalibrationError(f"{name} mechanism is not monotone over the intensity range")
        out[name] = mech
    return out


def inject_missingness(ds: Dataset, mech: MissingnessMechanism, rng: np.random.Generator) -> Dataset:
    """Blank each intensity of a complete dataset with probability 1 - P(observed)."""
    tab = ds.table()
    if not tab.observed.all():
        raise ValueError("inject_missingness needs a complete-case dataset")
    observed = rng.random(tab.y.shape) < mech.p_observed(tab.y)
    note = f"injected {mech.kind} a={mech.a:.6g} b={mech.b:.6g}"
    prov = f"{ds.provenance}; {note}" if ds.provenance else note
    return _to_dataset(tab.protein_ids, tab.peptide_ids, tab.pep_protein, tab.y, observed, prov)


def sample_proteins(ds: Dataset, k: int, rng: np.random.Generator) -> Dataset:
    """Seeded subsample of k proteins (input order preserved)."""
    if k >= len(ds):
        return ds
    idx = np.sort(rng.choice(len(ds), size=k, replace=False))
    return ds.with_proteins([ds.proteins[i] for i in idx], f"sampled {k} proteins")
