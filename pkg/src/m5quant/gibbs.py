"""Gibbs sampler for the midpoint mixed model, with (M5) or without (M3)
the probit missingness mechanism.

Model, with every N(., .) parameterized by its variance::

    y[i, j, k] ~ N(alpha[j(i)] + (+1 | -1) * mu[i] / 2, sigma)   k = A | B
    alpha[j(i)] ~ N(beta_alpha, xi),  mu[i] ~ N(beta_mu, tau)
    P(y observed | y) = Phi(a + b y)

Missing intensities are latent.  Given everything else a missing value is
extended skew-normal; mu and alpha have normal full conditionals; the
variance components are inverse-gamma; (a, b) are drawn from the normal
approximation around a probit fit on all current intensities.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import ndtri

from . import kernels
from .data import Dataset, ProteinCategory
from .dists import ExtendedSkewNormal, InverseGammaParams, inverse_gamma_sample
from .probit import ProbitError, fit_probit, sample_ab_posterior
from .rng import (
    TAG_ALPHA,
    TAG_IMPUTE,
    TAG_MU,
    TAG_THETA,
    CounterStream,
    counter,
    element_keys,
    mix64_array,
)

log = logging.getLogger(__name__)

IG_PRIOR = 0.001  # shape and rate of the variance priors
MEAN_PRIOR_PRECISION = 1e-4  # N(0, 10000) priors on beta_alpha, beta_mu
PARAM_NAMES = ("a", "b", "tau", "xi", "sigma", "beta_alpha", "beta_mu")
SIGN = np.array([1.0, -1.0])  # sample A carries +mu/2, sample B -mu/2


class Model(str, Enum):
    M5 = "M5"
    M3 = "M3"


class ChainError(RuntimeError):
    def __init__(self, iteration: int, cause: Exception):
        self.iteration = iteration
        super().__init__(f"sweep {iteration} failed: {cause!r}")


@dataclass(frozen=True)
class ModelParams:
    a: float
    b: float
    tau: float
    xi: float
    sigma: float
    beta_alpha: float
    beta_mu: float

    def __post_init__(self):
        for name in ("tau", "xi", "sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite variance, got {v}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES])


# values used throughout the simulation study
SIMULATION_PARAMS = ModelParams(a=-9.0, b=0.5, tau=9.0, xi=4.0, sigma=0.3, beta_alpha=18.5, beta_mu=0.0)


@dataclass(frozen=True)
class ChainConfig:
    n_iterations: int = 1000
    burn_in: int = 500
    seed: int = 0
    thin: int = 1
    model: Model = Model.M5
    ci_level: float = 0.95
    trace_proteins: tuple = ()
    heartbeat: int = 100

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("need 0 <= burn_in < n_iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        object.__setattr__(self, "model", Model(self.model))


@dataclass
class ChainState:
    params: ModelParams
    mu: np.ndarray  # per protein
    alpha: np.ndarray  # per peptide
    y: np.ndarray  # (n_peptides, 2): observed values plus current imputations


@dataclass(frozen=True)
class PosteriorSummary:
    protein_id: str
    post_mean: float
    post_sd: float
    ci_lower: float
    ci_upper: float
    n_kept_draws: int
    category: ProteinCategory


@dataclass
class ChainResult:
    summaries: list
    protein_ids: list  # input order, matching summaries and mu_draws columns
    theta_trace: np.ndarray  # (n_iterations, 7)
    mu_draws: np.ndarray  # (n_kept, n_proteins)
    protein_trace: dict = field(default_factory=dict)
    final_state: Optional[ChainState] = None
    ab_failures: int = 0

    def write_trace(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "parameter", "value"])
            for it, row in enumerate(self.theta_trace):
                for name, v in zip(PARAM_NAMES, row):
                    w.writerow([it, name, repr(float(v))])
                for pid, vals in self.protein_trace.items():
                    w.writerow([it, f"mu[{pid}]", repr(float(vals[it]))])


def missing_conditional(alpha: float, mu: float, side: int, params: ModelParams) -> ExtendedSkewNormal:
    """Full conditional of a missing intensity (side 0 = sample A)."""
    return ExtendedSkewNormal(alpha + SIGN[side] * mu / 2.0, params.sigma, params.a, params.b)


def mu_conditional(sum_diff, m, params: ModelParams):
    """Mean and variance of mu_i given sum_j (y_ij1 - y_ij2) over its m_i peptides."""
    s, t = params.sigma, params.tau
    denom = s + m * t / 2.0
    return (params.beta_mu * s + t / 2.0 * sum_diff) / denom, s * t / denom


def alpha_conditional(pair_sum, params: ModelParams):
    """Mean and variance of a peptide midpoint given y_1 + y_2."""
    s, x = params.sigma, params.xi
    denom = s + 2.0 * x
    return (params.beta_alpha * s + x * pair_sum) / denom, x * s / denom


def rank_statistic(s: PosteriorSummary) -> float:
    """Squared posterior mean over posterior SD, the ordering used for top-k tables."""
    if not s.post_sd > 0:
        raise ValueError(f"posterior SD must be positive for {s.protein_id}")
    return s.post_mean**2 / s.post_sd


class GibbsSampler:
    """Holds one chain.  Proteins are processed in protein_id order and
    peptides in peptide_id order, and each protein/peptide/slot has its own
    counter-based stream, so results do not depend on input ordering."""

    def __init__(self, ds: Dataset, cfg: ChainConfig, backend=None, init: Optional[ChainState] = None):
        if any(g.category is ProteinCategory.MISSING for g in ds.proteins):
            raise ValueError("drop proteins with no observed intensities before fitting")
        if not ds.proteins:
            raise ValueError("dataset has no proteins")
        self.cfg = cfg
        self.k = backend or kernels
        self.input_ids = [g.protein_id for g in ds.proteins]
        self.categories = {g.protein_id: g.category for g in ds.proteins}
        ordered = sorted(ds.proteins, key=lambda g: g.protein_id)
        ordered = [type(g)(g.protein_id, tuple(sorted(g.peptides, key=lambda p: p.peptide_id)))
                   for g in ordered]
        tab = Dataset(tuple(ordered)).table()
        self.tab = tab
        self.n = tab.n_proteins
        self.n_pep = tab.y.shape[0]
        self.prot = tab.pep_protein
        self.m = tab.m.astype(np.float64)
        self.observed = tab.observed
        self.obs_flat = np.ascontiguousarray(tab.observed.ravel())
        self.y_obs = tab.y.copy()
        self.miss_pep, self.miss_side = np.nonzero(~tab.observed)
        self.miss_sign = SIGN[self.miss_side]

        seed = cfg.seed
        slot_keys = mix64_array(tab.peptide_keys[self.miss_pep] + (self.miss_side + 1).astype(np.uint64))
        self.ek_impute = np.ascontiguousarray(element_keys(seed, TAG_IMPUTE, slot_keys))
        self.ek_alpha = np.ascontiguousarray(element_keys(seed, TAG_ALPHA, tab.peptide_keys))
        self.ek_mu = np.ascontiguousarray(element_keys(seed, TAG_MU, tab.protein_keys))
        self.order = {pid: i for i, pid in enumerate(tab.protein_ids)}

        self.state = init if init is not None else self.initial_state()
        self._ab_start = (self.state.params.a, self.state.params.b)
        self.ab_failures = 0

    # -- initialization ---------------------------------------------------

    def initial_state(self) -> ChainState:
        y, obs = self.y_obs, self.observed
        both = obs[:, 0] & obs[:, 1]
        grand = float(np.nanmean(y))
        alpha = np.where(both, 0.5 * (y[:, 0] + y[:, 1]),
                         np.where(obs[:, 0], y[:, 0], np.where(obs[:, 1], y[:, 1], grand)))
        d = np.where(both, y[:, 0] - y[:, 1], 0.0)
        n_match = np.bincount(self.prot, both.astype(float), minlength=self.n)
        sum_d = np.bincount(self.prot, d, minlength=self.n)
        mu = np.divide(sum_d, n_match, out=np.zeros(self.n), where=n_match > 0)

        resid = (d - mu[self.prot])[both]
        df = float(np.sum(np.maximum(n_match - 1, 0)))
        sigma = float(np.sum(resid**2) / (2 * df)) if df > 0 else 1.0
        params = ModelParams(
            a=0.0,
            b=0.0,
            tau=max(float(np.var(mu)), 1e-4),
            xi=max(float(np.var(alpha)), 1e-4),
            sigma=max(sigma, 1e-4),
            beta_alpha=float(np.mean(alpha)),
            beta_mu=float(np.mean(mu)),
        )
        yfull = y.copy()
        yfull[self.miss_pep, self.miss_side] = alpha[self.miss_pep] + self.miss_sign * mu[self.prot[self.miss_pep]] / 2
        a, b = float(ndtri(self.obs_flat.mean())), 0.0
        if self.cfg.model is Model.M5:
            try:
                fit = fit_probit(yfull.ravel(), self.obs_flat, backend=self.k)
                a, b = fit.a_hat, fit.b_hat
            except ProbitError as exc:
                log.debug("initial probit fit failed (%s); starting at b=0", exc)
        params = replace(params, a=a, b=b)
        return ChainState(params=params, mu=mu, alpha=alpha, y=yfull)

    # -- conditional updates ----------------------------------------------

    def impute(self, it: int) -> None:
        if not self.miss_pep.size:
            return
        p, st = self.state.params, self.state
        mu_x = st.alpha[self.miss_pep] + self.miss_sign * st.mu[self.prot[self.miss_pep]] / 2.0
        b = p.b if self.cfg.model is Model.M5 else 0.0
        draws = self.k.esn_impute(np.ascontiguousarray(mu_x), p.sigma, p.a, b, self.ek_impute, counter(it))
        st.y[self.miss_pep, self.miss_side] = draws

    def update_alpha(self, it: int) -> None:
        st = self.state
        mean, var = alpha_conditional(st.y[:, 0] + st.y[:, 1], st.params)
        st.alpha = mean + math.sqrt(var) * self.k.std_normals(self.ek_alpha, counter(it))

    def update_mu(self, it: int) -> None:
        st = self.state
        sum_d = np.bincount(self.prot, st.y[:, 0] - st.y[:, 1], minlength=self.n)
        mean, var = mu_conditional(sum_d, self.m, st.params)
        st.mu = mean + np.sqrt(var) * self.k.std_normals(self.ek_mu, counter(it))

    def residuals(self) -> np.ndarray:
        st = self.state
        half = st.mu[self.prot] / 2.0
        return st.y - st.alpha[:, None] - np.column_stack([half, -half])

    def update_variances(self, stream) -> None:
        st = self.state
        p = st.params
        n_pep = float(self.n_pep)
        tau = inverse_gamma_sample(
            InverseGammaParams(IG_PRIOR + self.n / 2.0, IG_PRIOR + np.sum((st.mu - p.beta_mu) ** 2) / 2.0), stream)
        xi = inverse_gamma_sample(
            InverseGammaParams(IG_PRIOR + n_pep / 2.0, IG_PRIOR + np.sum((st.alpha - p.beta_alpha) ** 2) / 2.0), stream)
        sigma = inverse_gamma_sample(
            InverseGammaParams(IG_PRIOR + n_pep, IG_PRIOR + np.sum(self.residuals() ** 2) / 2.0), stream)
        st.params = replace(p, tau=tau, xi=xi, sigma=sigma)

    def update_means(self, stream) -> None:
        st = self.state
        p = st.params
        prec_a = MEAN_PRIOR_PRECISION + self.n_pep / p.xi
        prec_m = MEAN_PRIOR_PRECISION + self.n / p.tau
        z = stream.standard_normal(2)
        beta_alpha = (np.sum(st.alpha) / p.xi) / prec_a + z[0] / math.sqrt(prec_a)
        beta_mu = (np.sum(st.mu) / p.tau) / prec_m + z[1] / math.sqrt(prec_m)
        st.params = replace(p, beta_alpha=float(beta_alpha), beta_mu=float(beta_mu))

    def update_ab(self, stream) -> None:
        st = self.state
        try:
            fit = fit_probit(st.y.ravel(), self.obs_flat, start=self._ab_start, backend=self.k)
            a, b = sample_ab_posterior(fit, stream)
        except ProbitError as exc:
            self.ab_failures += 1
            log.debug("keeping previous (a, b): %s", exc)
            return
        self._ab_start = (fit.a_hat, fit.b_hat)
        st.params = replace(st.params, a=a, b=b)

    def sweep(self, it: int) -> None:
        self.impute(it)
        self.update_alpha(it)
        self.update_mu(it)
        stream = CounterStream(self.cfg.seed, TAG_THETA, 0, it)
        self.update_variances(stream)
        self.update_means(stream)
        if self.cfg.model is Model.M5:
            self.update_ab(stream)

    # -- driver -----------------------------------------------------------

    def run(self) -> ChainResult:
        cfg = self.cfg
        kept = [it for it in range(cfg.burn_in, cfg.n_iterations) if (it - cfg.burn_in) % cfg.thin == 0]
        mu_draws = np.empty((len(kept), self.n))
        theta = np.empty((cfg.n_iterations, len(PARAM_NAMES)))
        traced = [pid for pid in cfg.trace_proteins if pid in self.order]
        ptrace = {pid: np.empty(cfg.n_iterations) for pid in traced}
        row = 0
        for it in range(cfg.n_iterations):
            try:
                self.sweep(it)
            except (ArithmeticError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
                raise ChainError(it, exc) from exc
            theta[it] = self.state.params.as_array()
            for pid in traced:
                ptrace[pid][it] = self.state.mu[self.order[pid]]
            if row < len(kept) and kept[row] == it:
                mu_draws[row] = self.state.mu
                row += 1
            if cfg.heartbeat and (it + 1) % cfg.heartbeat == 0:
                p = self.state.params
                log.info("sweep %d/%d a=%.4g b=%.4g tau=%.4g xi=%.4g sigma=%.4g beta_alpha=%.4g beta_mu=%.4g",
                         it + 1, cfg.n_iterations, p.a, p.b, p.tau, p.xi, p.sigma, p.beta_alpha, p.beta_mu)
        if self.ab_failures:
            log.info("(a, b) update skipped in %d sweeps", self.ab_failures)

        cols = np.array([self.order[pid] for pid in self.input_ids])
        mu_draws = mu_draws[:, cols]
        return ChainResult(
            summaries=summarize(mu_draws, self.input_ids, self.categories, cfg.ci_level),
            protein_ids=list(self.input_ids),
            theta_trace=theta,
            mu_draws=mu_draws,
            protein_trace=ptrace,
            final_state=self.state,
            ab_failures=self.ab_failures,
        )


def summarize(draws: np.ndarray, protein_ids, categories: dict, ci_level: float = 0.95) -> list:
    lo, hi = np.quantile(draws, [(1 - ci_level) / 2, (1 + ci_level) / 2], axis=0)
    mean = draws.mean(axis=0)
    sd = draws.std(axis=0, ddof=1) if draws.shape[0] > 1 else np.zeros(draws.shape[1])
    out = []
    for j, pid in enumerate(protein_ids):
        s = PosteriorSummary(pid, float(mean[j]), float(sd[j]), float(lo[j]), float(hi[j]),
                             draws.shape[0], categories[pid])
        if not s.ci_lower <= s.post_mean <= s.ci_upper:
            log.debug("posterior mean of %s outside its credible interval", pid)
        out.append(s)
    return out


def run_chain(ds: Dataset, cfg: ChainConfig, backend=None) -> ChainResult:
    return GibbsSampler(ds, cfg, backend=backend).run()


def m3_variant(ds: Dataset, cfg: ChainConfig, backend=None) -> ChainResult:
    """Ignorable-missingness fit: imputations from the unskewed normal, no (a, b) updates."""
    return run_chain(ds, replace(cfg, model=Model.M3), backend=backend)
