"""Both kernel backends must agree; the numba one is skipped if numba is absent."""
import numpy as np
import pytest

from qmcbif import kernels
from qmcbif.kernels import _numpy

numba_backend = pytest.importorskip("qmcbif.kernels._numba")


def _bins(rng, size):
    levels = rng.integers(1, 11, size=size)
    b = np.array([-np.inf, *np.arange(1.5, 10, 1.0), np.inf])
    return b[levels - 1], b[levels]


@pytest.fixture
def entries(rng):
    x = rng.normal(5, 20, size=2000)
    x[:5] = [-700.0, 700.0, 0.0, 1e4, -1e4]
    lo, hi = _bins(rng, x.size)
    return x, lo, hi


def test_log_bin_prob_agrees(entries):
    x, lo, hi = entries
    a = _numpy.log_bin_prob(x, lo, hi)
    b = numba_backend.log_bin_prob(x, lo, hi)
    assert np.all(np.isfinite(a))
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-300)


def test_grad_agrees(entries):
    x, lo, hi = entries
    np.testing.assert_allclose(_numpy.grad_log_bin_prob(x, lo, hi),
                               numba_backend.grad_log_bin_prob(x, lo, hi), rtol=1e-13, atol=1e-16)


def test_neg_log_lik_agrees(entries, rng):
    x, lo, hi = entries
    rows = np.sort(rng.integers(0, 40, size=x.size))
    ta, ca = _numpy.neg_log_lik(x, lo, hi, rows, 40, 700.0)
    tb, cb = numba_backend.neg_log_lik(x, lo, hi, rows, 40, 700.0)
    assert ca == cb
    assert ca >= 2  # the +-1e4 entries hit the clamp
    assert ta == pytest.approx(tb, rel=1e-12)


@pytest.mark.parametrize("rho", [0.05, 1.0, 20.0])
def test_prox_solve_agrees(rng, rho):
    t = rng.normal(5, 4, size=500)
    lo, hi = _bins(rng, t.size)
    x0 = rng.normal(5, 4, size=t.size)
    xa, sa, wa = _numpy.prox_solve(t, lo, hi, rho, x0, 1e-10, 5000)
    xb, sb, wb = numba_backend.prox_solve(t, lo, hi, rho, x0, 1e-10, 5000)
    assert wa <= 1e-10 and wb <= 1e-10
    np.testing.assert_allclose(xa, xb, rtol=0, atol=1e-9)


def test_backend_selection():
    assert kernels.BACKEND in ("numba", "numpy")
    assert kernels.get_backend("numpy") is _numpy
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_env_flag_selects_numpy():
    import subprocess
    import sys

    code = "from qmcbif import kernels; print(kernels.BACKEND)"
    env = {"QMCBIF_DISABLE_NUMBA": "1", "PATH": ""}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
