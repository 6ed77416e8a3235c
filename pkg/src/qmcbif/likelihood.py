"""Logistic bin likelihood, its gradient, and the trace-norm penalized objective.

For an observed level with bin ``(L, U]`` the likelihood of a latent value
``x`` under unit-scale logistic noise is ``f(x) = Phi(U - x) - Phi(L - x)``.
``-log f`` is convex with derivative bounded by 1 in magnitude.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import kernels
from .quantization import QuantizationScheme, bounds

NLL_CLAMP = 700.0


@dataclass(frozen=True, eq=False)
class ObservedMatrix:
    """Quantized observations on a subset of an ``m x n`` grid.

    Entries are kept in row-major order; ``rows``, ``cols`` and ``levels``
    are parallel int64 arrays.
    """

    m: int
    n: int
    rows: np.ndarray
    cols: np.ndarray
    levels: np.ndarray
    scheme: QuantizationScheme
    lower: np.ndarray = field(init=False, repr=False)
    upper: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.m) < 1 or int(self.n) < 1:
            raise ValueError("matrix dimensions must be positive")
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        levels = np.asarray(self.levels).ravel()
        if not (rows.size == cols.size == levels.size):
            raise ValueError("rows, cols and levels must have equal length")
        if rows.size == 0:
            raise ValueError("at least one observed entry is required")
        if rows.min() < 0 or rows.max() >= self.m or cols.min() < 0 or cols.max() >= self.n:
            raise ValueError("observed index out of range")
        lo, hi = bounds(levels, self.scheme)
        levels = levels.astype(np.int64)
        flat = rows * self.n + cols
        order = np.argsort(flat, kind="stable")
        flat = flat[order]
        if np.any(flat[1:] == flat[:-1]):
            raise ValueError("duplicate observed index")
        for name, value in (
            ("m", int(self.m)),
            ("n", int(self.n)),
            ("rows", rows[order]),
            ("cols", cols[order]),
            ("levels", levels[order]),
            ("lower", np.asarray(lo, dtype=float)[order]),
            ("upper", np.asarray(hi, dtype=float)[order]),
        ):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def shape(self):
        return (self.m, self.n)

    @property
    def size(self) -> int:
        """Number of observed entries, ``|Omega|``."""
        return int(self.rows.size)

    def mask(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        out[self.rows, self.cols] = True
        return out

    def dense_levels(self) -> np.ndarray:
        """Level values at observed entries and 0 elsewhere."""
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.levels
        return out

    def take(self, X) -> np.ndarray:
        return np.ascontiguousarray(X[self.rows, self.cols], dtype=float)

    def subset(self, idx) -> "ObservedMatrix":
        """Observed matrix restricted to entries ``idx`` (indices into Omega)."""
        idx = np.asarray(idx)
        return ObservedMatrix(self.m, self.n, self.rows[idx], self.cols[idx],
                              self.levels[idx], self.scheme)

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape != self.shape:
            raise ValueError(f"matrix shape {X.shape} does not match observations {self.shape}")
        return X


@dataclass(frozen=True)
class ObjectiveBreakdown:
    data_term: float
    trace_norm: float
    lam: float
    total: float
    clamped: int = 0


def logistic_cdf(x):
    """Standard logistic CDF; accepts +-inf."""
    return expit(x)


def _as_triplet(x, L, U):
    x, L, U = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, L, U)))
    if np.any(L >= U):
        raise ValueError("bin requires L < U")
    shape = x.shape
    flat = [np.ascontiguousarray(v).ravel() for v in (x, L, U)]
    return shape, flat


def log_bin_prob(x, L, U):
    """``log(Phi(U - x) - Phi(L - x))`` without cancellation."""
    shape, (xf, lf, uf) = _as_triplet(x, L, U)
    out = kernels.log_bin_prob(xf, lf, uf).reshape(shape)
    return float(out) if out.ndim == 0 else out


def grad_log_bin_prob(x, L, U):
    """Derivative of :func:`log_bin_prob` in ``x``.

    Simplifies to ``Phi(L - x) - Phi(x - U)``, which lies in ``[-1, 1]``.
    """
    shape, (xf, lf, uf) = _as_triplet(x, L, U)
    out = kernels.grad_log_bin_prob(xf, lf, uf).reshape(shape)
    return float(out) if out.ndim == 0 else out


def _nll(X, obs):
    X = obs._check(X)
    total, nclamped = kernels.neg_log_lik(obs.take(X), obs.lower, obs.upper,
                                          obs.rows, obs.m, NLL_CLAMP)
    return float(total), int(nclamped)


def neg_log_likelihood(X, obs: ObservedMatrix) -> float:
    """``-F_Y(X)``: summed ``-log f`` over observed entries only.

    Each per-entry term is clamped at ``NLL_CLAMP``; use
    :func:`penalized_objective` to see how many entries hit the clamp.
    """
    return _nll(X, obs)[0]


def grad_neg_log_likelihood(X, obs: ObservedMatrix) -> np.ndarray:
    """Dense ``m x n`` gradient of ``-F_Y``; exactly zero off Omega."""
    X = obs._check(X)
    G = np.zeros(obs.shape)
    G[obs.rows, obs.cols] = -kernels.grad_log_bin_prob(obs.take(X), obs.lower, obs.upper)
    return G


def trace_norm(X) -> float:
    X = np.asarray(X, dtype=float)
    if not np.any(X):
        return 0.0
    return float(np.linalg.svd(X, compute_uv=False).sum())


def penalized_objective(X, obs: ObservedMatrix, lam: float) -> ObjectiveBreakdown:
    """``G(X, lam) = -F_Y(X) + lam * ||X||_*`` and its parts."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    data, nclamped = _nll(X, obs)
    tn = trace_norm(X)
    return ObjectiveBreakdown(data, tn, float(lam), data + lam * tn, nclamped)
