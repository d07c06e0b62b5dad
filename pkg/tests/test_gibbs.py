import csv
import math

import numpy as np
import pytest
from scipy import integrate, stats

from m5quant.data import Dataset, PeptidePair, ProteinCategory, ProteinGroup
from m5quant.gibbs import (SIMULATION_PARAMS, ChainConfig, ChainError, GibbsSampler, Model,
                           ModelParams, alpha_conditional, m3_variant,
                           missing_conditional, mu_conditional, rank_statistic, run_chain, summarize)
from m5quant.kernels import available_backends, load_backend

P = ModelParams(a=-9.0, b=0.5, tau=9.0, xi=4.0, sigma=0.3, beta_alpha=18.5, beta_mu=0.4)


def joint_log(mu, alpha, y, params):
    """Unnormalized log joint of one protein: prior on mu and alpha plus the
    normal likelihood of complete pairs.  Written out term by term."""
    lp = stats.norm.logpdf(mu, params.beta_mu, math.sqrt(params.tau))
    sd = math.sqrt(params.sigma)
    for (y1, y2), al in zip(y, alpha):
        lp += stats.norm.logpdf(al, params.beta_alpha, math.sqrt(params.xi))
        lp += stats.norm.logpdf(y1, al + mu / 2, sd) + stats.norm.logpdf(y2, al - mu / 2, sd)
    return lp


def quad_mean_var(logf, lo, hi):
    ref = logf((lo + hi) / 2)
    f = lambda t: math.exp(logf(t) - ref)  # noqa: E731
    z = integrate.quad(f, lo, hi, limit=200)[0]
    m = integrate.quad(lambda t: t * f(t), lo, hi, limit=200)[0] / z
    v = integrate.quad(lambda t: (t - m) ** 2 * f(t), lo, hi, limit=200)[0] / z
    return m, v


def test_mu_conditional_matches_quadrature():
    y = np.array([[20.1, 18.9], [17.0, 16.2], [22.4, 20.0]])
    alpha = np.array([19.0, 16.0, 21.5])  # arbitrary: alpha cancels from mu's conditional
    m, v = mu_conditional(np.sum(y[:, 0] - y[:, 1]), 3, P)
    qm, qv = quad_mean_var(lambda t: joint_log(t, alpha, y, P), -10, 12)
    assert m == pytest.approx(qm, abs=1e-8) and v == pytest.approx(qv, rel=1e-7)


def test_alpha_conditional_matches_quadrature():
    y = np.array([[20.1, 18.9]])
    m, v = alpha_conditional(y.sum(), P)
    qm, qv = quad_mean_var(lambda t: joint_log(1.7, [t], y, P), 10, 30)
    assert m == pytest.approx(qm, abs=1e-8) and v == pytest.approx(qv, rel=1e-7)


def test_missing_conditional_tilts_by_nonobservation():
    d = missing_conditional(18.0, 2.0, 1, P)
    assert d.mu_x == 17.0 and d.sigma == P.sigma and (d.a, d.b) == (P.a, P.b)
    assert missing_conditional(18.0, 2.0, 0, P).mu_x == 19.0


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(0, 0, -1.0, 1, 1, 0, 0)
    with pytest.raises(ValueError):
        ChainConfig(n_iterations=10, burn_in=10)
    with pytest.raises(ValueError):
        ChainConfig(thin=0)


def test_missing_proteins_rejected(tiny_dataset):
    with pytest.raises(ValueError, match="no observed"):
        GibbsSampler(tiny_dataset, ChainConfig(20, 10))


CFG = ChainConfig(n_iterations=120, burn_in=60, seed=5, heartbeat=0)


def test_chain_is_deterministic(sim_small):
    ds, _ = sim_small
    a, b = run_chain(ds, CFG), run_chain(ds, CFG)
    assert np.array_equal(a.mu_draws, b.mu_draws)
    c = run_chain(ds, ChainConfig(120, 60, seed=6, heartbeat=0))
    assert not np.array_equal(a.mu_draws, c.mu_draws)


def test_chain_invariant_to_input_order(sim_small):
    ds, _ = sim_small
    rng = np.random.default_rng(0)
    shuffled = [ProteinGroup(g.protein_id, tuple(g.peptides[i] for i in rng.permutation(g.m_i)))
                for g in ds.proteins]
    shuffled = [shuffled[i] for i in rng.permutation(len(shuffled))]
    a = run_chain(ds, CFG)
    b = run_chain(Dataset(tuple(shuffled)), CFG)
    sa = {s.protein_id: s for s in a.summaries}
    sb = {s.protein_id: s for s in b.summaries}
    assert sa == sb
    assert b.protein_ids == [g.protein_id for g in shuffled]


def test_observed_values_untouched(sim_small):
    ds, _ = sim_small
    before = list(ds.pairs())
    g = GibbsSampler(ds, CFG)
    y0 = g.y_obs.copy()
    obs = g.observed
    for it in range(40):
        g.sweep(it)
        assert np.array_equal(g.state.y[obs], y0[obs])
    assert list(ds.pairs()) == before


def batch_mcse(x, batches=20):
    means = x[: len(x) // batches * batches].reshape(batches, -1, *x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(batches)


def test_posterior_means_recover_truth(sim_small):
    ds, truth = sim_small
    res = run_chain(ds, ChainConfig(1000, 500, seed=21, heartbeat=0))
    draws = res.mu_draws
    true_mu = np.array([truth[pid] for pid in res.protein_ids])
    tol = 4 * np.sqrt(draws.var(axis=0) + batch_mcse(draws) ** 2)
    inside = np.abs(draws.mean(axis=0) - true_mu) <= tol
    assert inside.mean() >= 0.95


def test_m3_keeps_ab_fixed_and_m5_moves_them(sim_small):
    ds, _ = sim_small
    m3 = m3_variant(ds, CFG)
    assert np.ptp(m3.theta_trace[:, 1]) == 0.0
    m5 = run_chain(ds, CFG)
    assert np.ptp(m5.theta_trace[:, 1]) > 0.0
    assert m5.ab_failures == 0


def test_result_shapes_and_trace(tmp_path, sim_small):
    ds, _ = sim_small
    pid = ds.proteins[0].protein_id
    cfg = ChainConfig(50, 20, seed=1, thin=3, trace_proteins=(pid, "absent"), heartbeat=0)
    res = run_chain(ds, cfg)
    assert res.mu_draws.shape == (10, len(ds))
    assert res.theta_trace.shape == (50, 7)
    assert list(res.protein_trace) == [pid]
    path = tmp_path / "t.csv"
    res.write_trace(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["iteration", "parameter", "value"]
    assert len(rows) == 1 + 50 * 8
    assert rows[8][1] == f"mu[{pid}]"


def test_summaries_bracket_mean(sim_small):
    ds, _ = sim_small
    for s in run_chain(ds, CFG).summaries:
        assert s.ci_lower <= s.post_mean <= s.ci_upper
        assert s.post_sd > 0 and s.n_kept_draws == 60


def test_summarize_and_rank_statistic():
    draws = np.column_stack([np.linspace(-1, 3, 101), np.full(101, 2.0)])
    out = summarize(draws, ["A", "B"], {"A": ProteinCategory.MATCHED, "B": ProteinCategory.ONE_SIDED})
    assert out[0].post_mean == pytest.approx(1.0)
    assert out[0].ci_lower == pytest.approx(-0.9) and out[0].ci_upper == pytest.approx(2.9)
    assert rank_statistic(out[0]) == pytest.approx(1.0 / out[0].post_sd)
    with pytest.raises(ValueError):
        rank_statistic(out[1])


def test_chain_error_carries_iteration(sim_small, monkeypatch):
    ds, _ = sim_small
    g = GibbsSampler(ds, CFG)
    orig = g.update_mu

    def boom(it):
        if it == 7:
            raise FloatingPointError("synthetic")
        orig(it)

    monkeypatch.setattr(g, "update_mu", boom)
    with pytest.raises(ChainError) as exc:
        g.run()
    assert exc.value.iteration == 7


def test_complete_data_skips_ab_update():
    rng = np.random.default_rng(3)
    pairs = [PeptidePair(f"P{i}", f"p{j}", float(x), float(x - 1))
             for i in range(5) for j, x in enumerate(rng.normal(18, 2, 3))]
    res = run_chain(Dataset.from_pairs(pairs), ChainConfig(30, 10, heartbeat=0))
    assert res.ab_failures == 30


@pytest.mark.skipif("cython" not in available_backends(), reason="compiled backend not built")
def test_backends_produce_same_chain(sim_small):
    ds, _ = sim_small
    cfg = ChainConfig(40, 20, seed=2, heartbeat=0)
    a = run_chain(ds, cfg, backend=load_backend("cython"))
    b = run_chain(ds, cfg, backend=load_backend("python"))
    assert np.allclose(a.mu_draws, b.mu_draws, rtol=0, atol=1e-9)


def test_simulation_params_constant():
    assert SIMULATION_PARAMS.as_array().tolist() == [-9.0, 0.5, 9.0, 4.0, 0.3, 18.5, 0.0]
    assert Model("M3") is Model.M3
