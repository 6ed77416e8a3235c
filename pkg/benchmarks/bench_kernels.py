"""Time the numba and numpy kernel backends on MovieLens-sized entry sets.

Usage: python benchmarks/bench_kernels.py [--entries N] [--repeat R]

Reports the best-of-R wall time per kernel and backend, the speedup, and the
max abs difference between backends. Also times one full QMC-BIF solve per
backend on a small synthetic instance (the backend is chosen at import, so
that part runs in subprocesses).
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from qmcbif.kernels import NUMBA_AVAILABLE, get_backend
from qmcbif.quantization import build_uniform_scheme

SOLVE_SNIPPET = """
import time, warnings
from qmcbif.data import generate_synthetic
from qmcbif.solver import SolverConfig, qmc_bif
from qmcbif import kernels
inst = generate_synthetic(100, 140, 5, 10, 0.1, seed=0)
cfg = SolverConfig(lam=1.0, rank=6, max_outer=60)
qmc_bif(inst.observed, SolverConfig(lam=1.0, rank=6, max_outer=2))  # warm-up / jit
warnings.simplefilter("ignore")
t = time.perf_counter()
res = qmc_bif(inst.observed, cfg)
print(kernels.BACKEND, time.perf_counter() - t, res.final_objective.total)
"""


def best_of(fn, repeat):
    out, best = None, np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def make_entries(n, seed=0):
    rng = np.random.default_rng(seed)
    scheme = build_uniform_scheme(5)
    levels = rng.integers(1, 6, n)
    lo, hi = scheme.bounds(levels)
    x = rng.uniform(0, 6, n)
    rows = np.sort(rng.integers(0, 943, n))
    return x, lo, hi, rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--entries", type=int, default=90_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-solve", action="store_true")
    args = ap.parse_args(argv)
    if not NUMBA_AVAILABLE:
        sys.exit("numba is not installed; nothing to compare")
    x, lo, hi, rows = make_entries(args.entries)
    target = x + 0.3
    nb, npy = get_backend("numba"), get_backend("numpy")
    cases = {
        "log_bin_prob": lambda k: k.log_bin_prob(x, lo, hi),
        "grad_log_bin_prob": lambda k: k.grad_log_bin_prob(x, lo, hi),
        "neg_log_lik": lambda k: k.neg_log_lik(x, lo, hi, rows, 943, 700.0)[0],
        "prox_solve": lambda k: k.prox_solve(target, lo, hi, 1.0, x, 1e-9, 500)[0],
    }
    for k in (nb, npy):  # compile / warm caches
        for fn in cases.values():
            fn(k)
    print(f"entries = {args.entries}, best of {args.repeat}")
    print(f"{'kernel':<20} {'numba_s':>10} {'numpy_s':>10} {'speedup':>8} {'max_diff':>10}")
    for name, fn in cases.items():
        t_nb, a = best_of(lambda: fn(nb), args.repeat)
        t_np, b = best_of(lambda: fn(npy), args.repeat)
        diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
        print(f"{name:<20} {t_nb:>10.5f} {t_np:>10.5f} {t_np / t_nb:>8.1f} {diff:>10.2e}")
    if args.skip_solve:
        return
    print("\nfull solve, 100x140 synthetic, 60 outer iterations")
    for flag in ("0", "1"):
        env = dict(os.environ, QMCBIF_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", SOLVE_SNIPPET], capture_output=True,
                             text=True, env=env, check=True)
        backend, wall, obj = out.stdout.split()
        print(f"  {backend:<6} wall={float(wall):.3f}s objective={float(obj):.10g}")


if __name__ == "__main__":
    main()
