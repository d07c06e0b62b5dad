import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from m5quant.baselines import (Method, anova_estimate, applicable, estimate, knn_impute, knnq,
                               median_ratio, qrollup)
from m5quant.data import Dataset, PeptidePair, ProteinCategory, ProteinGroup


def group(*pairs, pid="P"):
    return ProteinGroup(pid, tuple(PeptidePair(pid, f"p{i}", a, b) for i, (a, b) in enumerate(pairs)))


def from_diffs(diffs, base=20.0):
    return group(*[(base + d, base) for d in diffs])


@pytest.mark.parametrize("diffs,expected", [([1.0], 1.0), ([1.0, 2.0, 10.0], 2.0), ([1.0, 3.0], 2.0)])
def test_median_ratio_examples(diffs, expected):
    assert median_ratio(from_diffs(diffs)).estimate == expected


def test_median_ratio_ignores_unmatched_pairs():
    g = group((21.0, 20.0), (30.0, None), (None, 5.0))
    assert median_ratio(g).estimate == 1.0
    assert median_ratio(group((1.0, None), (None, 2.0))).estimate is None


def test_anova_examples():
    assert anova_estimate(group((10.0, 8.0), (None, 6.0))).estimate == 3.0
    assert anova_estimate(group((10.0, None), (12.0, None))).estimate is None
    g = from_diffs([0.5, 1.5, 4.0])
    assert anova_estimate(g).estimate == pytest.approx(np.mean([0.5, 1.5, 4.0]))


def test_qrollup_examples():
    assert qrollup(group((10.0, 9.0), (8.0, 7.0), (2.0, 1.0))).estimate == pytest.approx(1.0)
    assert qrollup(group((10.0, 4.0))).estimate == 6.0
    # 3 observed per side keeps the top 2
    g = group((10.0, 1.0), (8.0, 2.0), (0.0, 30.0))
    assert qrollup(g).estimate == pytest.approx(9.0 - 16.0)
    assert qrollup(group((1.0, None))).estimate is None
    with pytest.raises(ValueError):
        qrollup(g, fraction=0.0)


def test_qrollup_ties_are_deterministic():
    g = group((5.0, 1.0), (5.0, 2.0), (5.0, 3.0))
    assert qrollup(g).estimate == qrollup(ProteinGroup("P", tuple(reversed(g.peptides)))).estimate


def test_applicability_rules():
    cats = list(ProteinCategory)
    table = {m: {c for c in cats if applicable(m, c)} for m in Method}
    assert table[Method.MED] == {ProteinCategory.MATCHED}
    assert table[Method.ANOVA] == table[Method.Q] == {ProteinCategory.MATCHED, ProteinCategory.UNMATCHED}
    assert ProteinCategory.MISSING not in table[Method.KNNQ] and len(table[Method.KNNQ]) == 3


def test_estimate_presence_matches_category(tiny_dataset):
    for m in Method:
        for pe in estimate(tiny_dataset, m):
            assert pe.present == applicable(m, pe.category), (m, pe)


def knn_ds(rows):
    return Dataset.from_pairs([PeptidePair(pid, pep, a, b) for pid, pep, a, b in rows])


def test_knn_symmetric_average():
    ds = knn_ds([("N", "n1", 11.0, 10.0), ("N", "n2", 9.0, 10.0), ("T", "t", None, 10.0)])
    out = knn_impute(ds, k=2)
    assert out.by_id()["T"].peptides[0].y_a == pytest.approx(10.0)


def test_knn_k1_takes_nearest():
    ds = knn_ds([("N", "n1", 12.0, 10.0), ("N", "n2", 3.0, 4.0), ("T", "t", None, 10.0)])
    assert knn_impute(ds, k=1).by_id()["T"].peptides[0].y_a == 12.0


def test_knn_inverse_distance_weights():
    ds = knn_ds([("N", "n1", 12.0, 11.0), ("N", "n2", 6.0, 7.0), ("T", "t", 10.0, None)])
    # neighbours at distance 2 and 4 on sample A -> weights 1/2 and 1/4
    got = knn_impute(ds, k=2).by_id()["T"].peptides[0].y_b
    assert got == pytest.approx((11.0 * 0.5 + 7.0 * 0.25) / 0.75)


def test_knn_fills_double_gaps_from_protein_mean():
    ds = knn_ds([("N", "n1", 20.0, 19.0), ("N", "n2", 10.0, 11.0),
                 ("T", "t1", 19.6, None), ("T", "t2", None, None)])
    t2 = knn_impute(ds, k=1).by_id()["T"].peptides[1]
    assert (t2.y_a, t2.y_b) == (20.0, 19.0)


def test_knn_leaves_missing_protein_missing():
    ds = knn_ds([("N", "n1", 20.0, 19.0), ("Z", "z", None, None)])
    z = knn_impute(ds).by_id()["Z"].peptides[0]
    assert z.y_a is None and z.y_b is None


def test_knn_warns_on_few_candidates(caplog):
    ds = knn_ds([("N", "n1", 20.0, 19.0), ("T", "t", None, 3.0)])
    with caplog.at_level(logging.WARNING):
        out = knn_impute(ds, k=10)
    assert "only 1 candidate" in caplog.text
    assert out.by_id()["T"].peptides[0].y_a == 20.0


def test_knn_no_candidates_leaves_missing(caplog):
    ds = knn_ds([("T", "t", None, 3.0), ("U", "u", 4.0, None)])
    out = knn_impute(ds)
    assert out is ds and "no matched peptides" in caplog.text


def test_knnq_complete_data_equals_qrollup():
    ds = knn_ds([("A", "a1", 20.0, 19.0), ("A", "a2", 15.0, 14.5), ("B", "b1", 10.0, 12.0)])
    assert knn_impute(ds) is ds
    assert [e.estimate for e in knnq(ds)] == [qrollup(g).estimate for g in ds]


def test_knnq_keeps_original_category(tiny_dataset):
    cats = {pe.protein_id: (pe.category, pe.present) for pe in knnq(tiny_dataset)}
    assert cats["PC"] == (ProteinCategory.ONE_SIDED, True)
    assert cats["PD"] == (ProteinCategory.MISSING, False)


def test_knn_never_alters_observed(sim_small):
    ds, _ = sim_small
    out = knn_impute(ds)
    for p, q in zip(ds.pairs(), out.pairs()):
        if p.y_a is not None:
            assert q.y_a == p.y_a
        if p.y_b is not None:
            assert q.y_b == p.y_b
        if p.n_observed:
            assert q.matched


finite = st.floats(-20, 20, allow_nan=False)


@settings(max_examples=60)
@given(st.lists(st.tuples(st.floats(5, 30), finite), min_size=1, max_size=9), finite)
def test_shift_invariances(pairs, c):
    g = group(*[(a + d, a) for a, d in pairs])
    shifted = group(*[(a + d + c, a + c) for a, d in pairs])
    assert median_ratio(shifted).estimate == pytest.approx(median_ratio(g).estimate, abs=1e-9)
    assert anova_estimate(shifted).estimate == pytest.approx(anova_estimate(g).estimate, abs=1e-9)


@settings(max_examples=60)
@given(st.lists(st.tuples(st.floats(5, 30), st.floats(5, 30)), min_size=1, max_size=9))
def test_full_qrollup_is_anova(pairs):
    g = group(*pairs)
    assert qrollup(g, fraction=1.0).estimate == pytest.approx(anova_estimate(g).estimate, abs=1e-9)


@settings(max_examples=40)
@given(st.floats(5, 30), finite, st.integers(1, 8))
def test_constant_differences_agree(base, d, m):
    g = group(*[(base + i + d, base + i) for i in range(m)])
    assert median_ratio(g).estimate == pytest.approx(d, abs=1e-9)
    assert anova_estimate(g).estimate == pytest.approx(d, abs=1e-9)
