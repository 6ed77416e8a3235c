"""Comparison methods: trace-ball projected gradient and fixed-rank factored descent.

Both are textbook reconstructions of the algorithm families (projected
gradient onto a trace-norm ball, as in Q-MC / SPARFA-Lite; gradient descent
on exact-rank factors, as in the approximate projected gradient method), not
ports of the original code.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .likelihood import (ObjectiveBreakdown, ObservedMatrix, grad_neg_log_likelihood,
                         neg_log_likelihood)
from .solver import ConvergenceWarning, FactorPair, SolveResult, init_factors

VARIANTS = ("trace_ball", "fixed_rank")


@dataclass(frozen=True)
class BaselineConfig:
    variant: str
    trace_radius: float | None = None
    rank: int | None = None
    step_init: float = 1.0
    step_grow: float = 2.0
    step_shrink: float = 0.5
    tol: float = 1e-7
    max_iters: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.variant == "trace_ball":
            if self.trace_radius is None or self.trace_radius <= 0:
                raise ValueError("trace_ball needs a positive trace_radius")
            if self.rank is not None:
                raise ValueError("trace_ball does not take a rank")
        else:
            if self.rank is None or int(self.rank) != self.rank or self.rank < 1:
                raise ValueError("fixed_rank needs a positive integer rank")
            if self.trace_radius is not None:
                raise ValueError("fixed_rank does not take a trace_radius")
        if self.step_init <= 0 or not 0 < self.step_shrink < 1 or self.step_grow < 1:
            raise ValueError("invalid step-size rule")
        if self.tol <= 0 or self.max_iters < 1:
            raise ValueError("tol and max_iters must be positive")


def project_l1_ball(s, k):
    """Project a nonnegative vector onto ``{x >= 0, sum(x) <= k}``."""
    s = np.asarray(s, dtype=float)
    if s.sum() <= k:
        return s.copy()
    u = np.sort(s)[::-1]
    css = np.cumsum(u) - k
    idx = np.arange(1, u.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(s - theta, 0.0)


def project_trace_ball(X, k, rank_hint=None):
    """Euclidean projection of ``X`` onto ``{||X||_* <= k}``.

    With ``rank_hint``, only the leading singular triplets are computed,
    from the top eigenpairs of the smaller Gram matrix, doubling the count
    as needed. This is exact once the smallest computed singular value is
    at or below the soft threshold, since every later one then maps to
    zero. Otherwise a full SVD is used.
    """
    return _project(X, k, rank_hint)[0]


def _project(X, k, rank_hint=None):
    # returns the projection and its rank (None when X was inside the ball)
    if k <= 0:
        raise ValueError("trace radius must be positive")
    X = np.asarray(X, dtype=float)
    size = min(X.shape)
    count = 0 if rank_hint is None else max(1, int(rank_hint))
    A = X if X.shape[0] <= X.shape[1] else X.T
    gram = A @ A.T if 0 < 2 * count <= size else None
    while 0 < count and 2 * count <= size:
        w, Q = eigh(gram, subset_by_index=[size - count, size - 1], driver="evr")
        s = np.sqrt(np.maximum(w[::-1], 0.0))
        if s.sum() <= k or s[-1] <= 0:
            break  # may be interior, needs the full spectrum
        t = project_l1_ball(s, k)
        if t[-1] == 0:
            keep = t > 0
            L = Q[:, ::-1][:, keep]
            R = (A.T @ L) / s[keep]
            P = (L * t[keep]) @ R.T
            return (P if A is X else P.T), int(keep.sum())
        count *= 2
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    if s.sum() <= k:
        return X.copy(), None
    t = project_l1_ball(s, k)
    keep = t > 0
    return (U[:, keep] * t[keep]) @ Vt[keep], int(keep.sum())


def _breakdown(data, tn=np.nan):
    return ObjectiveBreakdown(float(data), float(tn), 0.0, float(data))


def qmc_trace_ball(obs: ObservedMatrix, config: BaselineConfig) -> SolveResult:
    """Projected gradient on ``-F_Y`` over the trace-norm ball of radius ``k``.

    Backtracking uses the projected-gradient sufficient decrease test, so
    accepted steps never increase the objective. Starts from the projection
    of the level matrix.
    """
    if config.variant != "trace_ball":
        raise ValueError("qmc_trace_ball needs variant='trace_ball'")
    k = config.trace_radius
    t0 = time.perf_counter()
    X, kept = _project(obs.dense_levels(), k)
    f = neg_log_likelihood(X, obs)
    trace = [_breakdown(f)]
    step = config.step_init
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        G = grad_neg_log_likelihood(X, obs)
        hint = None if kept is None else kept + 5
        while True:
            Xn, kept_n = _project(X - step * G, k, hint)
            D = Xn - X
            fn = neg_log_likelihood(Xn, obs)
            if fn <= f + np.vdot(G, D) + np.vdot(D, D) / (2 * step) and fn <= f:
                break
            step *= config.step_shrink
            if step < 1e-12:
                Xn, fn, kept_n = X, f, kept
                break
        kept = kept_n
        rel = (f - fn) / max(1.0, abs(f))
        X, f = Xn, fn
        trace.append(_breakdown(f))
        step *= config.step_grow
        if rel < config.tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"trace-ball PG did not converge in {config.max_iters} iterations",
                      ConvergenceWarning, stacklevel=2)
    tn = float(np.linalg.svd(X, compute_uv=False).sum())
    trace[-1] = _breakdown(f, tn)
    return SolveResult(X, None, None, trace, it, 0, 0, time.perf_counter() - t0,
                       converged, method="trace-ball")


def qmc_fixed_rank(obs: ObservedMatrix, config: BaselineConfig) -> SolveResult:
    """Alternating backtracking gradient steps on rank-``r`` factors of ``X``."""
    if config.variant != "fixed_rank":
        raise ValueError("qmc_fixed_rank needs variant='fixed_rank'")
    if config.rank > min(obs.shape):
        raise ValueError("rank exceeds min(m, n)")
    t0 = time.perf_counter()
    fp = init_factors(obs.m, obs.n, config.rank, config.seed)
    U, V = fp.U, fp.V
    f = neg_log_likelihood(U @ V.T, obs)
    trace = [_breakdown(f)]
    steps = [config.step_init, config.step_init]
    converged = False
    it = 0

    def descend(A, B, which):
        # one Armijo step on A with B fixed; X = A B^T (or its transpose)
        nonlocal f
        G = grad_neg_log_likelihood(A @ B.T if which == 0 else B @ A.T, obs)
        grad = G @ B if which == 0 else G.T @ B
        g2 = np.vdot(grad, grad)
        step = steps[which]
        while step > 1e-14:
            An = A - step * grad
            Xn = An @ B.T if which == 0 else B @ An.T
            fn = neg_log_likelihood(Xn, obs)
            if fn <= f - 1e-4 * step * g2:
                f = fn
                steps[which] = step * config.step_grow
                return An
            step *= config.step_shrink
        steps[which] = config.step_init
        return A

    for it in range(1, config.max_iters + 1):
        f_prev = f
        U = descend(U, V, 0)
        V = descend(V, U, 1)
        trace.append(_breakdown(f))
        if (f_prev - f) / max(1.0, abs(f_prev)) < config.tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"fixed-rank descent did not converge in {config.max_iters} iterations",
                      ConvergenceWarning, stacklevel=2)
    X = U @ V.T
    tn = float(np.linalg.svd(X, compute_uv=False).sum())
    trace[-1] = _breakdown(f, tn)
    return SolveResult(X, FactorPair(U, V), None, trace, it, 0, 0, time.perf_counter() - t0,
                       converged, method="fixed-rank")
