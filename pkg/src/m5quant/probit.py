"""Two-parameter probit regression of observation indicators on intensity."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import kernels
from .dists import mvn2_sample

log = logging.getLogger(__name__)

PRIOR_PRECISION = 1e-4  # N(0, 10000) priors on a and b
LL_ROUNDING = 1e-12


class ProbitError(ArithmeticError):
    """The probit likelihood has no usable maximum."""


class SeparationError(ProbitError):
    def __init__(self, direction: int):
        self.direction = direction
        side = "above" if direction > 0 else "below"
        super().__init__(f"complete separation: every observed value lies {side} every missing one")


class SingularInformationError(ProbitError):
    pass


@dataclass(frozen=True)
class ProbitFit:
    a_hat: float
    b_hat: float
    cov: np.ndarray
    info: np.ndarray
    converged: bool
    iterations: int
    loglik: float
    loglik_path: tuple = field(default=(), repr=False)


def separation_direction(y: np.ndarray, r: np.ndarray) -> int:
    """+1 / -1 when a threshold on y splits the classes, else 0."""
    y_obs, y_mis = y[r], y[~r]
    if y_mis.max() <= y_obs.min():
        return 1
    if y_obs.max() <= y_mis.min():
        return -1
    return 0


def _info_matrix(s) -> np.ndarray:
    return np.array([[s[3], s[4]], [s[4], s[5]]])


def fit_probit(
    y,
    r,
    start=None,
    max_iter: int = 100,
    tol: float = 1e-10,
    grad_tol: float = 1e-8,
    backend=None,
) -> ProbitFit:
    """Maximum-likelihood fit of P(r = 1 | y) = Phi(a + b y) by Fisher scoring.

    Steps that would lower the log-likelihood are halved.  ``start``
    warm-starts the iteration (the sampler passes the previous sweep's fit).
    """
    k = backend or kernels
    y = np.ascontiguousarray(y, dtype=np.float64)
    r = np.asarray(r, dtype=bool)
    r8 = r.view(np.uint8)
    n_obs = int(r.sum())
    if n_obs == 0 or n_obs == r.size:
        raise ProbitError("probit fit needs both observed and missing responses")
    if np.ptp(y) == 0:
        raise SingularInformationError("all intensities identical; slope not identifiable")
    direction = separation_direction(y, r)
    if direction:
        raise SeparationError(direction)

    theta = np.array(start, dtype=np.float64) if start is not None else np.array(
        [float(ndtri(n_obs / r.size)), 0.0]
    )
    s = k.probit_stats(y, r8, theta[0], theta[1])
    path = [s[0]]
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        info = _info_matrix(s)
        grad = np.array([s[1], s[2]])
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise SingularInformationError(str(exc)) from None
        # log-likelihood sums carry ~1e-13 relative rounding noise
        floor = s[0] - LL_ROUNDING * (1.0 + abs(s[0]))
        t = 1.0
        for _ in range(60):
            cand = theta + t * step
            s_new = k.probit_stats(y, r8, cand[0], cand[1])
            if s_new[0] >= floor or t * np.max(np.abs(step)) < tol:
                break
            t *= 0.5
        theta, s = cand, s_new
        path.append(s[0])
        if t * np.max(np.abs(step)) < tol and np.hypot(s[1], s[2]) < grad_tol:
            converged = True
            break

    info = _info_matrix(s)
    if not np.all(np.isfinite(info)) or np.linalg.det(info) <= 0:
        raise SingularInformationError("Fisher information is singular at the optimum")
    cov = np.linalg.inv(info)
    return ProbitFit(
        a_hat=float(theta[0]),
        b_hat=float(theta[1]),
        cov=0.5 * (cov + cov.T),
        info=info,
        converged=converged,
        iterations=it,
        loglik=float(s[0]),
        loglik_path=tuple(path),
    )


def posterior_cov(fit: ProbitFit, prior_precision: float = PRIOR_PRECISION) -> np.ndarray:
    prec = fit.info + prior_precision * np.eye(2)
    cov = np.linalg.inv(prec)
    return 0.5 * (cov + cov.T)


def sample_ab_posterior(fit: ProbitFit, rng, prior_precision: float = PRIOR_PRECISION):
    """One (a, b) draw from the large-sample normal posterior around the fit."""
    if not fit.converged:
        raise ProbitError("probit fit did not converge")
    mean = (fit.a_hat, fit.b_hat)
    cov = posterior_cov(fit, prior_precision)
    try:
        draw = mvn2_sample(mean, cov, rng)
    except np.linalg.LinAlgError:
        try:
            draw = mvn2_sample(mean, cov + 1e-10 * np.eye(2), rng)
        except np.linalg.LinAlgError as exc:
            raise ProbitError(f"posterior covariance not positive definite: {exc}") from None
    return float(draw[0]), float(draw[1])
