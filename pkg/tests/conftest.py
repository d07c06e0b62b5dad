import numpy as np
import pytest

from m5quant.data import Dataset, PeptidePair, drop_missing_proteins
from m5quant.simgen import SimulationConfig, generate_dataset

ACCEPTANCE_LINES = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def tiny_dataset():
    """One protein per category, hand-sized."""
    pairs = [
        PeptidePair("PA", "a1", 20.0, 19.0),
        PeptidePair("PA", "a2", 18.0, None),
        PeptidePair("PA", "a3", 17.5, 16.0),
        PeptidePair("PB", "b1", 21.0, None),
        PeptidePair("PB", "b2", None, 19.5),
        PeptidePair("PC", "c1", 22.0, None),
        PeptidePair("PC", "c2", 19.0, None),
        PeptidePair("PD", "d1", None, None),
    ]
    return Dataset.from_pairs(pairs, "tiny")


@pytest.fixture(scope="session")
def sim_small():
    cfg = SimulationConfig(n_proteins=60, seed=4)
    ds, truth = generate_dataset(cfg, np.random.default_rng(4))
    return drop_missing_proteins(ds), truth
