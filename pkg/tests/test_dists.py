import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from m5quant.dists import (ExtendedSkewNormal, InverseGammaParams, ParameterError, esn_density,
                           esn_sample, inverse_gamma_sample, log_gamma_sample, mvn2_sample,
                           truncated_normal_tail)
from m5quant.rng import CounterStream


def quad_moments(mu, sigma, a, b):
    """Mean and variance of N(mu, sigma) * (1 - Phi(a + b x)) by quadrature,
    written from the definition rather than the library density."""
    sd = math.sqrt(sigma)
    lo, hi = mu - 12 * sd, mu + 12 * sd

    def w(x):
        return stats.norm.pdf(x, mu, sd) * stats.norm.sf(a + b * x)

    pts = [mu, mu - 3 * sd, mu + 3 * sd]
    z = integrate.quad(w, lo, hi, points=pts, limit=200, epsabs=0, epsrel=1e-12)[0]
    m1 = integrate.quad(lambda x: x * w(x), lo, hi, points=pts, limit=200, epsabs=1e-13, epsrel=1e-12)[0] / z
    m2 = integrate.quad(lambda x: (x - m1) ** 2 * w(x), lo, hi, points=pts, limit=200,
                        epsabs=1e-13, epsrel=1e-12)[0] / z
    return m1, m2


ESN_CASES = [
    (18.5, 0.3, -9.0, 0.5),  # typical sampler state, high acceptance
    (22.0, 0.3, -9.0, 0.5),  # acceptance ~ 3%
    (24.0, 0.3, -9.0, 0.5),  # acceptance < 1%: selection path
    (10.0, 1.0, 0.0, -0.3),  # negative slope
    (0.0, 2.0, -50.0, 0.01),  # near-certain non-observation
]


@pytest.mark.parametrize("mu,sigma,a,b", ESN_CASES)
def test_esn_density_integrates_to_one(mu, sigma, a, b):
    d = ExtendedSkewNormal(mu, sigma, a, b)
    sd = math.sqrt(sigma)
    total = integrate.quad(lambda x: esn_density(d, x), mu - 15 * sd, mu + 15 * sd,
                           points=[mu], limit=200, epsabs=0, epsrel=1e-12)[0]
    assert abs(total - 1.0) < 1e-5


@pytest.mark.parametrize("mu,sigma,a,b", ESN_CASES)
def test_esn_sample_moments_match_quadrature(mu, sigma, a, b):
    d = ExtendedSkewNormal(mu, sigma, a, b)
    x = esn_sample(d, np.random.default_rng(1), size=10_000)
    m, v = quad_moments(mu, sigma, a, b)
    n = x.size
    assert abs(x.mean() - m) < 3.5 * math.sqrt(v / n)
    se_var = v * math.sqrt(2.0 / (n - 1))  # normal-theory SE, adequate for the mild skew here
    assert abs(x.var(ddof=1) - v) < 4 * se_var


def test_esn_low_acceptance_path_matches_density():
    d = ExtendedSkewNormal(24.0, 0.3, -9.0, 0.5)
    assert d.acceptance < 0.01
    x = esn_sample(d, np.random.default_rng(2), size=20_000)
    cdf = np.vectorize(lambda t: integrate.quad(lambda s: esn_density(d, s), 15.0, t)[0])
    grid = np.quantile(x, [0.1, 0.3, 0.5, 0.7, 0.9])
    assert np.allclose(cdf(grid), [0.1, 0.3, 0.5, 0.7, 0.9], atol=0.012)


def test_esn_b_zero_is_plain_normal():
    d = ExtendedSkewNormal(3.0, 0.5, 1.2, 0.0)
    x = esn_sample(d, np.random.default_rng(3), size=10_000)
    assert stats.kstest(x, "norm", args=(3.0, math.sqrt(0.5))).statistic < 0.02
    xs = np.linspace(0, 6, 7)
    assert np.allclose(esn_density(d, xs), stats.norm.pdf(xs, 3.0, math.sqrt(0.5)), rtol=1e-12)


def test_esn_works_with_counter_stream():
    d = ExtendedSkewNormal(18.5, 0.3, -9.0, 0.5)
    x = esn_sample(d, CounterStream(1, 9, 0, 0), size=5)
    y = esn_sample(d, CounterStream(1, 9, 0, 0), size=5)
    assert np.array_equal(x, y)


@pytest.mark.parametrize("bad", [(0.0, 0.0, 1.0, 1.0), (0.0, -1.0, 0.0, 1.0), (math.nan, 1.0, 0.0, 1.0),
                                 (0.0, 1.0, math.inf, 1.0)])
def test_esn_rejects_bad_parameters(bad):
    with pytest.raises(ParameterError):
        ExtendedSkewNormal(*bad)


@settings(max_examples=40, deadline=None)
@given(mu=st.floats(-30, 30), sigma=st.floats(0.01, 10), a=st.floats(-20, 20), b=st.floats(-3, 3))
def test_esn_density_finite_and_positive(mu, sigma, a, b):
    d = ExtendedSkewNormal(mu, sigma, a, b)
    f = esn_density(d, mu + math.sqrt(sigma) * np.array([-2.0, 0.0, 2.0]))
    assert np.all(np.isfinite(f)) and np.all(f >= 0)
    assert 0.0 <= d.acceptance <= 1.0


@pytest.mark.parametrize("lower", [1.0, 3.0, 8.0, 30.0])
def test_truncated_tail_matches_scipy(lower):
    x = truncated_normal_tail(lower, np.random.default_rng(4), 8000)
    assert x.min() >= lower
    ref = stats.truncnorm(lower, np.inf)
    assert stats.kstest(x, ref.cdf).pvalue > 1e-3


@pytest.mark.parametrize("shape,rate", [(0.001 + 250.0, 40.0), (3.0, 2.0), (0.5, 1.0)])
def test_inverse_gamma_moments(shape, rate):
    p = InverseGammaParams(shape, rate)
    x = inverse_gamma_sample(p, np.random.default_rng(5), size=20_000)
    ref = stats.invgamma(shape, scale=rate)
    assert stats.kstest(x, ref.cdf).pvalue > 1e-3


def test_log_gamma_tiny_shape_is_finite():
    lg = log_gamma_sample(1e-3, np.random.default_rng(6), 1000)
    assert np.all(np.isfinite(lg))
    # log G for shape s: E[log G] = digamma(s)
    from scipy.special import digamma, polygamma
    assert abs(lg.mean() - digamma(1e-3)) < 4 * math.sqrt(polygamma(1, 1e-3) / 1000)


def test_inverse_gamma_clips_overflow():
    x = inverse_gamma_sample(InverseGammaParams(1e-3, 1e-3), np.random.default_rng(7), size=2000)
    assert np.all(np.isfinite(x)) and np.all(x > 0)


def test_inverse_gamma_rejects_bad_params():
    with pytest.raises(ParameterError):
        InverseGammaParams(0.0, 1.0)
    with pytest.raises(ParameterError):
        InverseGammaParams(1.0, math.inf)


def test_mvn2_sample_covariance():
    cov = np.array([[2.0, 0.6], [0.6, 0.5]])
    x = mvn2_sample([1.0, -1.0], cov, np.random.default_rng(8), size=40_000)
    assert np.allclose(x.mean(axis=0), [1.0, -1.0], atol=0.03)
    assert np.allclose(np.cov(x.T), cov, atol=0.04)


def test_mvn2_rejects_non_pd():
    with pytest.raises(np.linalg.LinAlgError):
        mvn2_sample([0, 0], [[1.0, 2.0], [2.0, 1.0]], np.random.default_rng(0))
