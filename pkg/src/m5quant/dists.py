"""Probability primitives used by the sampler.

Variances, not standard deviations, parameterize every normal here.  All
samplers take an ``rng`` exposing ``random(size)`` and
``standard_normal(size)``; a :class:`numpy.random.Generator` or a
:class:`m5quant.rng.CounterStream` both work.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
MIN_ACCEPT = 0.01


class ParameterError(ValueError):
    """Distribution parameters outside their domain."""


def norm_pdf(x):
    return np.exp(-0.5 * np.square(x) - _LOG_SQRT_2PI)


def norm_cdf(x):
    return ndtr(x)


def norm_ppf(p):
    return ndtri(p)


@dataclass(frozen=True)
class ExtendedSkewNormal:
    """Normal N(mu_x, sigma) tilted by Phi(-a - b x).

    This is the law of a normal value given that a probit selection with
    P(observed | x) = Phi(a + b x) did *not* observe it.
    """

    mu_x: float
    sigma: float
    a: float
    b: float

    def __post_init__(self):
        vals = (self.mu_x, self.sigma, self.a, self.b)
        if not all(math.isfinite(v) for v in vals):
            raise ParameterError(f"non-finite ESN parameters {vals}")
        if self.sigma <= 0:
            raise ParameterError(f"ESN variance must be positive, got {self.sigma}")

    @property
    def sigma_x(self) -> float:
        return math.sqrt(self.sigma)

    @property
    def c(self) -> float:
        return -self.b * self.sigma_x

    @property
    def omega(self) -> float:
        return (-self.a - self.b * self.mu_x) / math.sqrt(1.0 + self.sigma * self.b**2)

    @property
    def acceptance(self) -> float:
        """Acceptance rate of the normal-proposal rejection sampler."""
        return float(ndtr(self.omega))


def esn_density(d: ExtendedSkewNormal, x):
    x = np.asarray(x, dtype=np.float64)
    z = (x - d.mu_x) / d.sigma_x
    logf = (
        -0.5 * z * z
        - _LOG_SQRT_2PI
        - math.log(d.sigma_x)
        + log_ndtr(-d.a - d.b * x)
        - log_ndtr(d.omega)
    )
    out = np.exp(logf)
    return float(out) if out.ndim == 0 else out


def esn_sample(d: ExtendedSkewNormal, rng, size=None):
    """Draw from the ESN.

    Normal-proposal rejection when the acceptance rate is at least 1%;
    below that, the exact selection representation: draw the latent
    W = U + bX truncated to W < -a with an exponential tail sampler,
    then X | W from its normal conditional.
    """
    n = 1 if size is None else int(size)
    if d.b == 0.0:
        out = d.mu_x + d.sigma_x * np.asarray(rng.standard_normal(n))
    elif d.acceptance >= MIN_ACCEPT:
        out = np.empty(n)
        todo = np.arange(n)
        while todo.size:
            x = d.mu_x + d.sigma_x * np.asarray(rng.standard_normal(todo.size))
            u = np.asarray(rng.random(todo.size))
            acc = u < ndtr(-d.a - d.b * x)
            out[todo[acc]] = x[acc]
            todo = todo[~acc]
    else:
        out = _selection_draw(d, rng, n)
    return float(out[0]) if size is None else out


def _selection_draw(d: ExtendedSkewNormal, rng, n: int) -> np.ndarray:
    sw = math.sqrt(1.0 + d.b * d.b * d.sigma)
    v = truncated_normal_tail(-d.omega, rng, n)
    z = np.asarray(rng.standard_normal(n))
    return d.mu_x - (d.b * d.sigma / sw) * v + d.sigma_x / sw * z


def truncated_normal_tail(lower: float, rng, n: int) -> np.ndarray:
    """Standard normal conditioned on exceeding ``lower`` (> 0)."""
    lam = 0.5 * (lower + math.sqrt(lower * lower + 4.0))
    out = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        prop = lower - np.log(np.asarray(rng.random(todo.size))) / lam
        acc = np.asarray(rng.random(todo.size)) <= np.exp(-0.5 * (prop - lam) ** 2)
        out[todo[acc]] = prop[acc]
        todo = todo[~acc]
    return out


@dataclass(frozen=True)
class InverseGammaParams:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0) or not (
            math.isfinite(self.shape) and math.isfinite(self.rate)
        ):
            raise ParameterError(f"inverse-gamma needs shape, rate > 0; got {self}")


def log_gamma_sample(shape: float, rng, n: int) -> np.ndarray:
    """log of Gamma(shape, 1) draws; Marsaglia-Tsang with the shape<1 boost.

    Working on the log scale keeps tiny-shape draws (shape ~ 1e-3, where
    the boost factor U**(1/shape) underflows) finite.
    """
    boost = shape < 1.0
    k = shape + 1.0 if boost else shape
    d = k - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        x = np.asarray(rng.standard_normal(todo.size))
        u = np.asarray(rng.random(todo.size))
        v = (1.0 + c * x) ** 3
        ok = v > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            ok &= np.log(u) < 0.5 * x * x + d - d * v + d * np.log(v)
        out[todo[ok]] = np.log(d * v[ok])
        todo = todo[~ok]
    if boost:
        out += np.log(np.asarray(rng.random(n))) / shape
    return out


def inverse_gamma_sample(p: InverseGammaParams, rng, size=None):
    """1/Gamma(shape, scale=1/rate); overflowing draws clip to the largest float."""
    n = 1 if size is None else int(size)
    log_x = math.log(p.rate) - log_gamma_sample(p.shape, rng, n)
    out = np.exp(np.minimum(log_x, math.log(sys.float_info.max)))
    return float(out[0]) if size is None else out


def mvn2_sample(mean, cov, rng, size=None):
    """Bivariate normal via Cholesky; raises LinAlgError for a non-PD cov."""
    mean = np.asarray(mean, dtype=np.float64)
    chol = np.linalg.cholesky(np.asarray(cov, dtype=np.float64))
    n = 1 if size is None else int(size)
    z = np.asarray(rng.standard_normal(2 * n)).reshape(n, 2)
    out = mean + z @ chol.T
    return out[0] if size is None else out
