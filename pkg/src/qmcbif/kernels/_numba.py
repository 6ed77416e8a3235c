"""Numba-compiled per-entry kernels; see ``_numpy`` for the reference twin."""
import math

import numpy as np
from numba import njit

LN2 = math.log(2.0)
ARMIJO_C = 1e-4
MAX_HALVINGS = 60
EPS = np.finfo(np.float64).eps


@njit(cache=True)
def _log_sigmoid(t):
    if t >= 0:
        return -math.log1p(math.exp(-t))
    return t - math.log1p(math.exp(t))


@njit(cache=True)
def _sigmoid(t):
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


@njit(cache=True)
def _log1mexp(d):
    if d > -LN2:
        return math.log(-math.expm1(d))
    return math.log1p(-math.exp(d))


@njit(cache=True)
def _lbp(x, lo, hi):
    return _log_sigmoid(hi - x) + _log_sigmoid(x - lo) + _log1mexp(lo - hi)


@njit(cache=True)
def _glbp(x, lo, hi):
    return _sigmoid(lo - x) - _sigmoid(x - hi)


@njit(cache=True)
def log_bin_prob(x, lo, hi):
    out = np.empty(x.size)
    for k in range(x.size):
        out[k] = _lbp(x[k], lo[k], hi[k])
    return out


@njit(cache=True)
def grad_log_bin_prob(x, lo, hi):
    out = np.empty(x.size)
    for k in range(x.size):
        out[k] = _glbp(x[k], lo[k], hi[k])
    return out


@njit(cache=True)
def neg_log_lik(x, lo, hi, rows, nrows, clamp):
    per_row = np.zeros(nrows)
    nclamped = 0
    for k in range(x.size):
        v = -_lbp(x[k], lo[k], hi[k])
        if v > clamp:
            v = clamp
            nclamped += 1
        per_row[rows[k]] += v
    total = 0.0
    for i in range(nrows):
        total += per_row[i]
    return total, nclamped


@njit(cache=True)
def _prox_obj(x, t, lo, hi, rho):
    d = x - t
    return -_lbp(x, lo, hi) + 0.5 * rho * d * d


@njit(cache=True)
def _prox_grad(x, t, lo, hi, rho):
    return -_glbp(x, lo, hi) + rho * (x - t)


@njit(cache=True)
def prox_solve(t, lo, hi, rho, x0, tol, maxit):
    x = x0.copy()
    # curvature of each 1-D problem lies in [rho, rho + 1/2]
    smin, smax = 1.0 / (rho + 0.5), 1.0 / rho
    sweeps = 0
    worst = 0.0
    for k in range(x.size):
        xk, tk, lk, hk = x[k], t[k], lo[k], hi[k]
        g = _prox_grad(xk, tk, lk, hk, rho)
        trial = 1.0 / (rho + 0.25)
        it = 0
        while it < maxit and abs(g) > tol:
            f = _prox_obj(xk, tk, lk, hk, rho)
            slack = 8 * EPS * (1.0 + abs(f))
            step = trial
            xn = xk - step * g
            for _ in range(MAX_HALVINGS):
                if _prox_obj(xn, tk, lk, hk, rho) <= f - ARMIJO_C * step * g * g + slack:
                    break
                step *= 0.5
                xn = xk - step * g
            gn = _prox_grad(xn, tk, lk, hk, rho)
            # secant (Barzilai-Borwein) trial step for the next iteration
            dg = gn - g
            trial = (xn - xk) / dg if dg != 0.0 else smax
            trial = min(max(trial, smin), smax)
            xk, g = xn, gn
            it += 1
        x[k] = xk
        if it > sweeps:
            sweeps = it
        if abs(g) > worst:
            worst = abs(g)
    return x, sweeps, worst
