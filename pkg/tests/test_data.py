import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from m5quant.data import (Dataset, EstimateRow, IngestionError, PeptidePair, ProteinCategory,
                          ProteinGroup, categorize, complete_case_reduce, drop_missing_proteins,
                          ingest_csv, read_estimates, write_csv, write_estimates)

M, U, O, X = (ProteinCategory.MATCHED, ProteinCategory.UNMATCHED, ProteinCategory.ONE_SIDED,
              ProteinCategory.MISSING)


def pp(a, b, pep="p"):
    return PeptidePair("P", pep, a, b)


@pytest.mark.parametrize("pairs,cat", [
    ([pp(1.0, 2.0)], M),
    ([pp(1.0, None, "x"), pp(None, 2.0, "y")], U),
    ([pp(1.0, None, "x"), pp(3.0, None, "y")], O),
    ([pp(None, 2.0)], O),
    ([pp(None, None)], X),
    ([pp(None, None, "x"), pp(1.0, 2.0, "y")], M),
])
def test_categorize(pairs, cat):
    assert categorize(pairs) is cat
    assert ProteinGroup("P", tuple(pairs)).category is cat


def test_peptide_pair_rejects_non_finite():
    with pytest.raises(ValueError):
        pp(math.nan, 1.0)


def test_protein_group_properties(tiny_dataset):
    g = tiny_dataset.by_id()["PA"]
    assert g.m_i == 3 and g.n_matched_pairs == 2
    assert g.missing_fraction == pytest.approx(1 / 6)
    assert list(g.observed(1)) == [19.0, 16.0]


def test_dataset_census(tiny_dataset):
    counts = tiny_dataset.category_counts()
    assert counts == {M: 1, U: 1, O: 1, X: 1}
    assert tiny_dataset.n_slots == 16 and tiny_dataset.n_missing == 7


def test_duplicate_protein_rejected():
    g = ProteinGroup("P", (pp(1.0, 2.0),))
    with pytest.raises(ValueError):
        Dataset((g, g))


def test_table_layout(tiny_dataset):
    tab = tiny_dataset.table()
    assert tab.y.shape == (8, 2)
    assert tab.observed.sum() == 9
    assert np.isnan(tab.y[~tab.observed]).all()
    assert list(tab.m) == [3, 2, 2, 1]
    assert len(set(tab.peptide_keys.tolist())) == 8


def test_csv_round_trip(tmp_path, tiny_dataset):
    path = tmp_path / "d.csv"
    write_csv(tiny_dataset, path)
    back = ingest_csv(path)
    assert [g.protein_id for g in back] == [g.protein_id for g in tiny_dataset]
    assert list(back.pairs()) == list(tiny_dataset.pairs())


def _write(tmp_path, text):
    p = tmp_path / "in.csv"
    p.write_text(text)
    return p


def test_ingest_skips_bad_rows(tmp_path, caplog):
    p = _write(tmp_path, "protein_id,peptide_id,intensity_a,intensity_b\n"
                         "P1,a,1.5,2.5\nP1,b,abc,2\nP1,c,1,\nP2,d,,3\nP2,e,1,2,9\n,f,1,2\n")
    ds = ingest_csv(p)
    assert len(list(ds.pairs())) == 3
    assert "lines 3,6,7" in caplog.text
    assert "rejected_rows=3" in ds.provenance


def test_ingest_duplicate_key_fatal(tmp_path):
    p = _write(tmp_path, "protein_id,peptide_id,intensity_a,intensity_b\nP1,a,1,2\nP1,a,3,4\n")
    with pytest.raises(IngestionError, match="duplicate"):
        ingest_csv(p)


@pytest.mark.parametrize("text", ["", "a,b,c,d\nP,x,1,2\n", "protein_id,peptide_id,intensity_a,intensity_b\n",
                                  "protein_id,peptide_id,intensity_a,intensity_b\nP,x,zz,1\n"])
def test_ingest_fatal_cases(tmp_path, text):
    with pytest.raises(IngestionError):
        ingest_csv(_write(tmp_path, text))


def test_ingest_missing_file(tmp_path):
    with pytest.raises(IngestionError, match="not found"):
        ingest_csv(tmp_path / "nope.csv")


def test_ingest_log2(tmp_path):
    p = _write(tmp_path, "protein_id,peptide_id,intensity_a,intensity_b\nP,x,1024,0\nP,y,8,2\n")
    ds = ingest_csv(p, log2=True)
    pairs = list(ds.pairs())
    assert pairs[0].y_a == 10.0 and pairs[0].y_b is None
    assert pairs[1].y_a == 3.0 and pairs[1].y_b == 1.0


def test_drop_missing_and_complete_case(tiny_dataset):
    d = drop_missing_proteins(tiny_dataset)
    assert [g.protein_id for g in d] == ["PA", "PB", "PC"]
    cc = complete_case_reduce(tiny_dataset)
    assert [g.protein_id for g in cc] == ["PA"]
    assert all(p.matched for p in cc.pairs())
    assert cc.by_id()["PA"].m_i == 2
    assert complete_case_reduce(cc) is cc


def test_estimates_round_trip(tmp_path):
    rows = [EstimateRow("P1", M, "M5", 1.25, 0.5, 0.2, 2.3, 4, 3),
            EstimateRow("P2", O, "KNNQ", -0.1, None, None, None, 1, 0)]
    path = tmp_path / "e.csv"
    write_estimates(rows, path)
    assert read_estimates(path) == rows


@given(st.lists(st.tuples(st.one_of(st.none(), st.floats(0, 40)), st.one_of(st.none(), st.floats(0, 40))),
                min_size=1, max_size=8))
def test_category_is_order_invariant(vals):
    pairs = [pp(a, b, f"p{i}") for i, (a, b) in enumerate(vals)]
    assert categorize(pairs) is categorize(list(reversed(pairs)))
    has_match = any(a is not None and b is not None for a, b in vals)
    assert (categorize(pairs) is M) == has_match
