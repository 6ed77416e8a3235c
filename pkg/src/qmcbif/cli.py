"""Command-line front end: ``qmcbif {synth, movielens, solve, bench}``."""
from __future__ import annotations

import argparse
import csv
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import bench, kernels
from .baselines import BaselineConfig, qmc_fixed_rank, qmc_trace_ball
from .data import (generate_synthetic, hidden_count, load_movielens, numerical_rank,
                   read_instance, split_holdout, write_instance, write_matrix)
from .solver import SolverConfig, qmc_bif


class CliError(Exception):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return v


def _fraction(text):
    v = float(text)
    if not 0 <= v < 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1), got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qmcbif", description=(
        "Quantized matrix completion with bilinear factorization and ALM."))
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic quantized instance")
    s.add_argument("--m", type=_positive_int, default=250, help="rows (default 250)")
    s.add_argument("--n", type=_positive_int, default=350, help="columns (default 350)")
    s.add_argument("--rank", type=_positive_int, default=5, help="rank before rescaling (default 5)")
    s.add_argument("--levels", type=int, default=10, help="quantization levels (default 10)")
    s.add_argument("--missing", type=_fraction, default=0.1, help="fraction hidden (default 0.1)")
    s.add_argument("--noise", type=_nonneg_float, default=0.0,
                   help="logistic noise scale added before quantizing (default 0)")
    s.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    s.add_argument("--out", required=True, help="instance file to write")

    ml = sub.add_parser("movielens", help="validate MovieLens-100k u.data and export it")
    ml.add_argument("path", help="u.data file")
    ml.add_argument("--holdout", type=_fraction, default=0.0,
                    help="fraction of ratings held out (default 0: no split)")
    ml.add_argument("--seed", type=int, default=0, help="split seed (default 0)")
    ml.add_argument("--out", help="instance file for the (training) ratings; the holdout "
                                  "goes to OUT.holdout and the id map to OUT.ids")

    so = sub.add_parser("solve", help="run one method on one instance")
    src = so.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="instance file written by 'synth' or 'movielens'")
    src.add_argument("--movielens", help="u.data file")
    so.add_argument("--holdout", type=_fraction, default=None,
                    help="with --movielens: fraction held out for RMSE (default 0.1)")
    so.add_argument("--holdout-file", help="with --input: instance file of held-out entries")
    so.add_argument("--method", choices=bench.METHODS, default="qmc-bif",
                    help="qmc-bif (default), trace-ball or fixed-rank")
    so.add_argument("--lambda", dest="lam", metavar="LAMBDA", type=_nonneg_float, default=None,
                    help="trace-norm weight (default 0.1*sqrt(|Omega|))")
    so.add_argument("--rho", type=float, default=1.0, help="ALM penalty (default 1)")
    so.add_argument("--rank", type=_positive_int, default=None,
                    help="rank estimate for qmc-bif or exact rank for fixed-rank "
                         "(default min(10, m, n))")
    so.add_argument("--k", type=float, default=None,
                    help="trace-ball radius (default: trace norm of the mean-filled levels)")
    so.add_argument("--inner-tol", type=float, default=1e-6, help="factor alternation tolerance")
    so.add_argument("--outer-tol", type=float, default=1e-5, help="ALM feasibility tolerance")
    so.add_argument("--z-tol", type=float, default=1e-9, help="per-entry Z-step tolerance")
    so.add_argument("--max-inner", type=_positive_int, default=100, help="factor sweeps per outer step")
    so.add_argument("--max-outer", type=_positive_int, default=300, help="outer ALM iterations")
    so.add_argument("--max-z-iters", type=_positive_int, default=500, help="Z-step descent iterations")
    so.add_argument("--tol", type=float, default=1e-7, help="baseline stopping tolerance")
    so.add_argument("--max-iters", type=_positive_int, default=500, help="baseline iteration cap")
    so.add_argument("--standard-order", action="store_true",
                    help="update Z before the multiplier (textbook ALM order)")
    so.add_argument("--no-clamp", action="store_true", help="do not clip predictions for RMSE")
    so.add_argument("--seed", type=int, default=0, help="initialization / split seed (default 0)")
    so.add_argument("--out", required=True,
                    help="output prefix: writes OUT.csv and OUT.matrix.txt")

    b = sub.add_parser("bench", help="run an experiment spec and write result CSV")
    b.add_argument("spec", help="experiment spec file (key = value lines)")
    b.add_argument("--workers", type=_positive_int, default=None,
                   help="parallel worker processes (default 1)")
    b.add_argument("--out", default=None, help="CSV path (overrides the spec's output)")
    return p


def _print_config(title, items):
    print(f"# {title}")
    for k, v in items.items():
        print(f"#   {k} = {v}")
    sys.stdout.flush()


def cmd_synth(args):
    cfg = {k: getattr(args, k) for k in ("m", "n", "rank", "levels", "missing", "noise", "seed", "out")}
    _print_config("synth configuration", cfg)
    try:
        inst = generate_synthetic(args.m, args.n, args.rank, args.levels, args.missing,
                                  args.noise, args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    params = {k: cfg[k] for k in ("m", "n", "rank", "levels", "missing", "noise", "seed")}
    try:
        write_instance(args.out, inst.observed, inst.ground_truth, params)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}") from None
    X0 = inst.ground_truth
    nr = numerical_rank(X0)
    print(f"observed = {inst.observed.size}")
    print(f"hidden = {hidden_count(args.missing, args.m, args.n)}")
    print(f"numerical_rank = {nr} (bound {args.rank + 1}: {'ok' if nr <= args.rank + 1 else 'VIOLATED'})")
    print(f"value_range = [{X0.min():.6g}, {X0.max():.6g}]")
    return 0


def cmd_movielens(args):
    _print_config("movielens configuration", vars(args) | {"func": None})
    try:
        ds = load_movielens(args.path)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from None
    obs = ds.observed
    print(f"records = {ds.n_records}")
    print(f"shape = {obs.m} x {obs.n}")
    print(f"min_user_ratings = {int(ds.user_counts.min())}")
    print(f"level_counts = {np.bincount(obs.levels, minlength=6)[1:].tolist()}")
    if args.out:
        train, hold = obs, None
        if args.holdout > 0:
            train, hold = split_holdout(obs, args.holdout, args.seed)
        meta = {"source": Path(args.path).name, "holdout": args.holdout, "seed": args.seed}
        try:
            write_instance(args.out, train, None, meta | {"part": "train"})
            if hold is not None:
                write_instance(f"{args.out}.holdout", hold, None, meta | {"part": "holdout"})
            with open(f"{args.out}.ids", "w") as fh:
                fh.write("kind,index,id\n")
                fh.writelines(f"user,{i},{u}\n" for i, u in enumerate(ds.user_ids))
                fh.writelines(f"item,{j},{v}\n" for j, v in enumerate(ds.item_ids))
        except OSError as exc:
            raise CliError(f"cannot write {args.out}: {exc}") from None
        print(f"train = {train.size}" + (f", holdout = {hold.size}" if hold is not None else ""))
    return 0


def _load_solve_input(args):
    truth = hold = None
    dataset = None
    try:
        if args.movielens:
            frac = 0.1 if args.holdout is None else args.holdout
            obs = load_movielens(args.movielens).observed
            dataset = "movielens"
            if frac > 0:
                obs, hold = split_holdout(obs, frac, args.seed)
                dataset = f"movielens-hold{frac:g}"
        else:
            if args.holdout is not None:
                raise CliError("--holdout applies to --movielens; use --holdout-file with --input")
            obs, truth, params = read_instance(args.input)
            dataset = Path(args.input).stem
            if args.holdout_file:
                hold, _, _ = read_instance(args.holdout_file)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from None
    return dataset, obs, truth, hold


def cmd_solve(args):
    dataset, obs, truth, hold = _load_solve_input(args)
    if args.rank is None:
        args.rank = min(10, obs.m, obs.n)
    try:
        if args.method == "qmc-bif":
            cfg = SolverConfig(lam=args.lam, rho=args.rho, rank=args.rank,
                               inner_tol=args.inner_tol, outer_tol=args.outer_tol,
                               z_tol=args.z_tol, max_inner=args.max_inner,
                               max_outer=args.max_outer, max_z_iters=args.max_z_iters,
                               seed=args.seed, multiplier_first=not args.standard_order)
            cfg = cfg.resolve(obs)
            shown = asdict(cfg)
        elif args.method == "trace-ball":
            k = args.k if args.k is not None else bench.filled_trace_scale(obs)
            cfg = BaselineConfig("trace_ball", trace_radius=k, tol=args.tol,
                                 max_iters=args.max_iters, seed=args.seed)
            shown = asdict(cfg)
        else:
            cfg = BaselineConfig("fixed_rank", rank=args.rank, tol=args.tol,
                                 max_iters=args.max_iters, seed=args.seed)
            shown = asdict(cfg)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    _print_config(f"solve configuration ({args.method}, backend={kernels.BACKEND})",
                  {"input": args.input or args.movielens, "observed": obs.size,
                   "shape": f"{obs.m}x{obs.n}", **shown})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if args.method == "qmc-bif":
            res = qmc_bif(obs, cfg)
        elif args.method == "trace-ball":
            res = qmc_trace_ball(obs, cfg)
        else:
            res = qmc_fixed_rank(obs, cfg)
    status = "converged" if res.converged else "max_iter"
    fin = res.final_objective
    print(f"status = {status} after {res.outer_iters} iterations ({res.wall_time:.3f} s)")
    print(f"objective: data_term = {fin.data_term:.10g}  trace_norm = {fin.trace_norm:.10g}  "
          f"lambda = {fin.lam:.6g}  total = {fin.total:.10g}  clamped = {fin.clamped}")
    metrics = []
    if truth is not None:
        metrics.append(("relative_error", bench.relative_error(res.x_star, truth)))
    if hold is not None:
        metrics.append(("rmse", bench.rmse(res.x_star, hold, clamp=not args.no_clamp)))
    metrics.append(("trace_norm", fin.trace_norm))
    metrics.append(("objective", fin.total))
    for name, value in metrics:
        if name in ("relative_error", "rmse"):
            print(f"{name} = {value:.6g}")
    lam = cfg.lam if args.method == "qmc-bif" else None
    rho = cfg.rho if args.method == "qmc-bif" else None
    rank = args.rank if args.method != "trace-ball" else None
    k = cfg.trace_radius if args.method == "trace-ball" else None
    rows = [bench.ResultRow(dataset, args.method, lam, rho, rank, k, args.seed, name, value,
                            res.outer_iters, res.wall_time, status) for name, value in metrics]
    try:
        out_dir = Path(args.out).parent
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(f"{args.out}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(bench.CSV_HEADER)
            w.writerows(r.cells() for r in rows)
        write_matrix(f"{args.out}.matrix.txt", res.x_star)
    except OSError as exc:
        raise CliError(f"cannot write outputs for {args.out}: {exc}") from None
    return 0


def cmd_bench(args):
    try:
        spec = bench.load_spec(args.spec)
    except OSError as exc:
        raise CliError(f"cannot read spec: {exc}") from None
    except bench.SpecError as exc:
        raise CliError(f"{args.spec}: {exc}") from None
    output = args.out or spec.output
    workers = args.workers or 1
    print("# bench configuration (flag > spec file > default)")
    print(f"#   workers = {workers}")
    print(f"#   output = {output}")
    for line in bench.format_spec(spec).splitlines():
        print(f"#   {line}")
    sys.stdout.flush()
    rows = bench.run_experiments(spec, workers=workers, output=output, progress=sys.stderr)
    print(bench.summarize(rows), end="")
    return 0


COMMANDS = {"synth": cmd_synth, "movielens": cmd_movielens, "solve": cmd_solve,
            "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"qmcbif {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
