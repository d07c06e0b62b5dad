"""Pure-numpy implementation of the hot kernels.

Mirrors ``_ckernels.pyx`` draw-for-draw: both consume the same counters in
the same order, so the two backends agree up to libm rounding.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import log_ndtr, ndtr

from .rng import GOLDEN, MASK64, mix64_array

MIN_ACCEPT = 0.01
MAX_ATTEMPTS = 1 << 20
TAIL_OFFSET = 1 << 22

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def uniforms(ekeys: np.ndarray, ctr: int) -> np.ndarray:
    off = np.uint64(((ctr + 1) * GOLDEN) & MASK64)
    with np.errstate(over="ignore"):
        h = mix64_array(ekeys + off)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _normals(ekeys: np.ndarray, ctr: int) -> np.ndarray:
    u1 = uniforms(ekeys, ctr)
    u2 = uniforms(ekeys, ctr + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


def std_normals(ekeys: np.ndarray, ctr0: int) -> np.ndarray:
    """One standard normal per element key (consumes counters ctr0, ctr0+1)."""
    return _normals(np.asarray(ekeys, dtype=np.uint64), ctr0)


def esn_impute(mu_x, sigma, a, b, ekeys, ctr0):
    """Draw one extended skew-normal value per slot.

    Rejection from N(mu_x, sigma) with acceptance Phi(-a - b x) when the
    acceptance rate Phi(omega) is at least ``MIN_ACCEPT``; otherwise the
    exact selection representation X | (U + bX < -a) with an exponential
    tail sampler for the truncated latent.
    """
    mu_x = np.asarray(mu_x, dtype=np.float64)
    ekeys = np.asarray(ekeys, dtype=np.uint64)
    sd = math.sqrt(sigma)
    if b == 0.0:
        return mu_x + sd * _normals(ekeys, ctr0)

    out = np.empty_like(mu_x)
    sw = math.sqrt(1.0 + b * b * sigma)
    omega = (-a - b * mu_x) / sw
    rejectable = ndtr(omega) >= MIN_ACCEPT

    idx = np.flatnonzero(rejectable)
    t = 0
    while idx.size and t < MAX_ATTEMPTS:
        c = ctr0 + 3 * t
        ek = ekeys[idx]
        x = mu_x[idx] + sd * _normals(ek, c)
        u = uniforms(ek, c + 2)
        acc = u < ndtr(-a - b * x)
        out[idx[acc]] = x[acc]
        idx = idx[~acc]
        t += 1

    tail = np.concatenate([np.flatnonzero(~rejectable), idx])
    if tail.size:
        out[tail] = _esn_tail(mu_x[tail], omega[tail], sigma, b, sw, ekeys[tail], ctr0)
    return out


def _esn_tail(mu, omega, sigma, b, sw, ekeys, ctr0):
    t0 = -omega
    lam = 0.5 * (t0 + np.sqrt(t0 * t0 + 4.0))
    v = np.empty_like(mu)
    n_extra = np.empty_like(mu)
    idx = np.arange(mu.size)
    t = 0
    while idx.size:
        c = ctr0 + TAIL_OFFSET + 4 * t
        ek = ekeys[idx]
        prop = t0[idx] - np.log(uniforms(ek, c)) / lam[idx]
        acc = uniforms(ek, c + 1) <= np.exp(-0.5 * (prop - lam[idx]) ** 2)
        hit = idx[acc]
        v[hit] = prop[acc]
        n_extra[hit] = _normals(ek[acc], c + 2)
        idx = idx[~acc]
        t += 1
    return mu - (b * sigma / sw) * v + math.sqrt(sigma) / sw * n_extra


def probit_stats(y, r, a, b):
    """Log-likelihood, score and expected information of the probit model.

    Returns ``(loglik, g_a, g_b, i_aa, i_ab, i_bb)``.
    """
    y = np.asarray(y, dtype=np.float64)
    q = np.where(np.asarray(r, dtype=bool), 1.0, -1.0)
    eta = a + b * y
    log_phi = -0.5 * eta * eta - _LOG_SQRT_2PI
    lp_pos = log_ndtr(eta)
    lp_neg = log_ndtr(-eta)
    ll = float(np.sum(np.where(q > 0, lp_pos, lp_neg)))
    score = q * np.exp(log_phi - np.where(q > 0, lp_pos, lp_neg))
    w = np.exp(2.0 * log_phi - lp_pos - lp_neg)
    return (
        ll,
        float(score.sum()),
        float((score * y).sum()),
        float(w.sum()),
        float((w * y).sum()),
        float((w * y * y).sum()),
    )
