from pathlib import Path

import numpy as np
import pytest

from qmcbif.likelihood import ObservedMatrix
from qmcbif.quantization import build_uniform_scheme

ROOT = Path(__file__).resolve().parents[1]
ML100K = ROOT / "data" / "ml-100k" / "u.data"


def random_observed(rng, m, n, num_levels=5, frac=0.5):
    """Random observations with at least one observed entry."""
    scheme = build_uniform_scheme(num_levels)
    mask = rng.random((m, n)) < frac
    mask.flat[rng.integers(m * n)] = True
    rows, cols = np.nonzero(mask)
    levels = rng.integers(1, num_levels + 1, size=rows.size)
    return ObservedMatrix(m, n, rows, cols, levels, scheme)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
