"""Hot per-entry kernels with a numba backend and a pure-numpy fallback.

The numba backend is used when numba imports cleanly, unless the environment
variable ``QMCBIF_DISABLE_NUMBA`` is set to a non-empty value other than
``0``. Both backends stay importable for comparison via :func:`get_backend`.
"""
import os

from . import _numpy

try:
    from . import _numba
except ImportError:  # pragma: no cover - numba missing
    _numba = None

NUMBA_AVAILABLE = _numba is not None


def _numba_disabled():
    return os.environ.get("QMCBIF_DISABLE_NUMBA", "") not in ("", "0")


def get_backend(name=None):
    """Return the kernel module for ``name`` ('numba' or 'numpy')."""
    if name is None:
        name = BACKEND
    if name == "numpy":
        return _numpy
    if name == "numba":
        if _numba is None:
            raise RuntimeError("numba backend requested but numba is not installed")
        return _numba
    raise ValueError(f"unknown kernel backend {name!r}")


BACKEND = "numba" if NUMBA_AVAILABLE and not _numba_disabled() else "numpy"
_active = get_backend(BACKEND)

log_bin_prob = _active.log_bin_prob
grad_log_bin_prob = _active.grad_log_bin_prob
neg_log_lik = _active.neg_log_lik
prox_solve = _active.prox_solve

__all__ = [
    "BACKEND",
    "NUMBA_AVAILABLE",
    "get_backend",
    "log_bin_prob",
    "grad_log_bin_prob",
    "neg_log_lik",
    "prox_solve",
]
