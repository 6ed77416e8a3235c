"""Pure-numpy versions of the per-entry kernels.

Every function here has a twin in ``_numba`` with the same signature and the
same arithmetic, so the two backends agree to rounding.
"""
import numpy as np

LN2 = np.log(2.0)
ARMIJO_C = 1e-4
MAX_HALVINGS = 60


def _log_sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = -np.log1p(np.exp(-t[pos]))
    neg = ~pos
    out[neg] = t[neg] - np.log1p(np.exp(t[neg]))
    return out


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    neg = ~pos
    e = np.exp(t[neg])
    out[neg] = e / (1.0 + e)
    return out


def _log1mexp(d):
    # log(1 - exp(d)) for d <= 0
    out = np.empty_like(d)
    near = d > -LN2
    out[near] = np.log(-np.expm1(d[near]))
    far = ~near
    out[far] = np.log1p(-np.exp(d[far]))
    return out


def log_bin_prob(x, lo, hi):
    with np.errstate(invalid="ignore"):
        return _log_sigmoid(hi - x) + _log_sigmoid(x - lo) + _log1mexp(lo - hi)


def grad_log_bin_prob(x, lo, hi):
    return _sigmoid(lo - x) - _sigmoid(x - hi)


def neg_log_lik(x, lo, hi, rows, nrows, clamp):
    nll = -log_bin_prob(x, lo, hi)
    over = nll > clamp
    nll[over] = clamp
    per_row = np.bincount(rows, weights=nll, minlength=nrows)
    total = 0.0
    for v in per_row:
        total += v
    return total, int(over.sum())


def _prox_obj(x, t, lo, hi, rho):
    d = x - t
    return -log_bin_prob(x, lo, hi) + 0.5 * rho * d * d


def _prox_grad(x, t, lo, hi, rho):
    return -grad_log_bin_prob(x, lo, hi) + rho * (x - t)


def prox_solve(t, lo, hi, rho, x0, tol, maxit):
    """Minimize ``-log f(x) + rho/2 (x - t)^2`` entrywise by backtracking GD.

    The first trial step is ``1/(rho + 1/4)``; later trial steps are the
    secant (Barzilai-Borwein) step, clipped to the inverse curvature range
    ``[1/(rho + 1/2), 1/rho]``, then Armijo backtracking. Returns
    ``(x, sweeps, worst_residual)`` where ``sweeps`` is the largest
    per-entry iteration count.
    """
    x = np.array(x0, dtype=float, copy=True)
    smin, smax = 1.0 / (rho + 0.5), 1.0 / rho
    trial = np.full(x.shape, 1.0 / (rho + 0.25))
    iters = np.zeros(x.shape, dtype=np.int64)
    active = np.arange(x.size)
    g = _prox_grad(x, t, lo, hi, rho)
    for _ in range(maxit):
        active = active[np.abs(g[active]) > tol]
        if active.size == 0:
            break
        xa, ta, la, ha, ga = x[active], t[active], lo[active], hi[active], g[active]
        fa = _prox_obj(xa, ta, la, ha, rho)
        slack = 8 * np.finfo(float).eps * (1.0 + np.abs(fa))
        step = trial[active]
        xn = xa - step * ga
        pending = np.arange(active.size)
        for _ in range(MAX_HALVINGS):
            fn = _prox_obj(xn[pending], ta[pending], la[pending], ha[pending], rho)
            gp = ga[pending]
            ok = fn <= fa[pending] - ARMIJO_C * step[pending] * gp * gp + slack[pending]
            pending = pending[~ok]
            if pending.size == 0:
                break
            step[pending] *= 0.5
            xn[pending] = xa[pending] - step[pending] * ga[pending]
        gn = _prox_grad(xn, ta, la, ha, rho)
        dg = gn - ga
        with np.errstate(divide="ignore", invalid="ignore"):
            bb = np.where(dg != 0, (xn - xa) / dg, smax)
        trial[active] = np.clip(bb, smin, smax)
        x[active] = xn
        iters[active] += 1
        g[active] = gn
    worst = float(np.max(np.abs(g))) if g.size else 0.0
    sweeps = int(iters.max()) if iters.size else 0
    return x, sweeps, worst
