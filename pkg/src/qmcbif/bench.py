"""Experiment harness: method x dataset x hyperparameter grids written to CSV.

Experiment spec files are flat ``key = value`` text; ``#`` starts a comment
and list values are comma separated. Recognized keys and defaults are the
fields of :class:`ExperimentSpec`. Example::

    dataset = synthetic
    m = 100
    n = 140
    ranks = 5
    levels = 10
    missing = 0.1
    methods = qmc-bif, trace-ball, fixed-rank
    lambda_grid = 0.3, 1, 3
    rank_grid = 6, 8
    k_grid = 0.7, 0.75
    repetitions = 3

``lambda_unit = sqrt_omega`` multiplies the lambda grid by ``sqrt(|Omega|)``;
``k_unit = filled_trace`` multiplies the trace-ball radii by the trace norm
of the level matrix with unobserved entries set to the mean observed level.
With ``validation > 0`` (ratings data only) every grid point is scored on a
validation split carved from the training ratings, then each method is refit
on the full training set with its best grid point and scored on the holdout.
``submatrix = rows, cols`` restricts ratings data to its most active users
and items before splitting.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, qmc_fixed_rank, qmc_trace_ball
from .data import densest_submatrix, generate_synthetic, load_movielens, split_holdout
from .likelihood import ObservedMatrix, trace_norm
from .solver import SolverConfig, qmc_bif

CSV_HEADER = ["dataset", "method", "lambda", "rho", "rank", "k", "seed", "metric",
              "value", "iters", "wall_time", "status"]
METRICS = ("relative_error", "rmse", "trace_norm", "objective")
METHODS = ("qmc-bif", "trace-ball", "fixed-rank")


class SpecError(ValueError):
    def __init__(self, message, lineno=None, key=None):
        self.lineno, self.key = lineno, key
        where = []
        if lineno is not None:
            where.append(f"line {lineno}")
        if key is not None:
            where.append(f"field '{key}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class ExperimentSpec:
    dataset: str = "synthetic"
    m: int = 100
    n: int = 140
    ranks: tuple = (5,)
    levels: int = 10
    missing: float = 0.1
    noise: float = 0.0
    ratings_path: str = ""
    submatrix: tuple = ()
    holdout: float = 0.1
    validation: float = 0.0
    methods: tuple = METHODS
    lambda_grid: tuple = (1.0,)
    lambda_unit: str = "abs"
    rank_grid: tuple = (10,)
    k_grid: tuple = (1.0,)
    k_unit: str = "filled_trace"
    rho: float = 1.0
    multiplier_first: bool = True
    inner_tol: float = 1e-6
    outer_tol: float = 1e-5
    z_tol: float = 1e-9
    max_inner: int = 100
    max_outer: int = 300
    max_z_iters: int = 500
    baseline_tol: float = 1e-7
    baseline_max_iters: int = 500
    clamp: bool = True
    repetitions: int = 1
    seed_base: int = 0
    output: str = "results.csv"

    def __post_init__(self):
        if self.dataset not in ("synthetic", "movielens"):
            raise SpecError("dataset must be 'synthetic' or 'movielens'", key="dataset")
        if not self.methods:
            raise SpecError("method list is empty", key="methods")
        for mth in self.methods:
            if mth not in METHODS:
                raise SpecError(f"unknown method {mth!r}; choose from {', '.join(METHODS)}",
                                key="methods")
        if self.submatrix and (self.dataset != "movielens" or len(self.submatrix) != 2):
            raise SpecError("needs two values (rows, cols) and ratings data", key="submatrix")
        for key in ("ranks", "lambda_grid", "rank_grid", "k_grid"):
            if not getattr(self, key):
                raise SpecError("grid is empty", key=key)
        if self.lambda_unit not in ("abs", "sqrt_omega"):
            raise SpecError("must be 'abs' or 'sqrt_omega'", key="lambda_unit")
        if self.k_unit not in ("abs", "filled_trace"):
            raise SpecError("must be 'abs' or 'filled_trace'", key="k_unit")
        if self.repetitions < 1:
            raise SpecError("must be at least 1", key="repetitions")
        if self.dataset == "movielens" and not self.ratings_path:
            raise SpecError("movielens dataset needs ratings_path", key="ratings_path")
        if self.validation and self.dataset != "movielens":
            raise SpecError("validation tuning applies to ratings data only", key="validation")
        if not 0 <= self.validation < 1:
            raise SpecError("must lie in [0, 1)", key="validation")


_LIST_KEYS = {"submatrix": int, "ranks": int, "methods": str, "lambda_grid": float,
              "rank_grid": int, "k_grid": float}


def _field_types():
    out = {}
    for f in fields(ExperimentSpec):
        default = f.default
        out[f.name] = _LIST_KEYS.get(f.name) if f.name in _LIST_KEYS else type(default)
    return out


def _parse_scalar(kind, text):
    if kind is bool:
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def parse_spec(text: str) -> ExperimentSpec:
    types = _field_types()
    values, where = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (p.strip() for p in line.partition("="))
        if not sep:
            raise SpecError("expected 'key = value'", lineno)
        if key not in types:
            raise SpecError("unknown field", lineno, key)
        if key in values:
            raise SpecError("field given twice", lineno, key)
        try:
            if key in _LIST_KEYS:
                items = [v.strip() for v in value.split(",") if v.strip()]
                values[key] = tuple(_parse_scalar(_LIST_KEYS[key], v) for v in items)
            else:
                values[key] = _parse_scalar(types[key], value)
        except ValueError as exc:
            raise SpecError(str(exc), lineno, key) from None
        where[key] = lineno
    try:
        return ExperimentSpec(**values)
    except SpecError as exc:
        if exc.lineno is None and exc.key in where:
            msg = str(exc).split(": ", 1)[-1]
            raise SpecError(msg, where[exc.key], exc.key) from None
        raise


def _fmt_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_spec(spec: ExperimentSpec) -> str:
    lines = []
    for f in fields(ExperimentSpec):
        v = getattr(spec, f.name)
        if f.name in _LIST_KEYS:
            v = ", ".join(_fmt_value(x) for x in v)
        else:
            v = _fmt_value(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_spec(path) -> ExperimentSpec:
    return parse_spec(Path(path).read_text())


def relative_error(x_hat, x0) -> float:
    """``||x_hat - x0||_F / ||x0||_F``."""
    x_hat, x0 = np.asarray(x_hat, dtype=float), np.asarray(x0, dtype=float)
    if x_hat.shape != x0.shape:
        raise ValueError("shape mismatch")
    denom = np.linalg.norm(x0)
    if denom == 0:
        raise ValueError("ground truth is identically zero")
    return float(np.linalg.norm(x_hat - x0) / denom)


def rmse(x_hat, holdout: ObservedMatrix, clamp=True) -> float:
    """Root mean squared error against held-out levels.

    With ``clamp`` predictions are first clipped to ``[1, num_levels]``.
    """
    if holdout is None or holdout.size == 0:
        raise ValueError("holdout set is empty")
    pred = holdout.take(np.asarray(x_hat, dtype=float))
    if clamp:
        pred = np.clip(pred, 1, holdout.scheme.num_levels)
    return float(np.sqrt(np.mean((pred - holdout.levels) ** 2)))


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    method: str
    lam: float | None
    rho: float | None
    rank: int | None
    k: float | None
    seed: int
    metric: str
    value: float
    iters: int
    wall_time: float
    status: str

    def cells(self):
        def num(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return format(v, ".17g")
            return str(v)

        return [self.dataset, self.method, num(self.lam), num(self.rho), num(self.rank),
                num(self.k), str(self.seed), self.metric, num(float(self.value)),
                str(self.iters), format(self.wall_time, ".6f"), self.status]


@dataclass(frozen=True)
class Task:
    index: int
    dataset_id: str
    data: dict
    method: str
    params: dict
    seed: int
    spec: ExperimentSpec = field(repr=False)


def _build_data(spec: ExperimentSpec, data: dict):
    """Returns ``(train, ground_truth or None, holdout or None)``."""
    if spec.dataset == "synthetic":
        inst = generate_synthetic(spec.m, spec.n, data["rank"], spec.levels, spec.missing,
                                  spec.noise, data["seed"])
        return inst.observed, inst.ground_truth, None
    obs = load_movielens(spec.ratings_path).observed
    if spec.submatrix:
        obs = densest_submatrix(obs, *spec.submatrix)
    train, hold = split_holdout(obs, spec.holdout, data["seed"])
    if data.get("stage") == "val":
        train, hold = split_holdout(train, spec.validation, data["seed"] + 1)
    return train, None, hold


def filled_trace_scale(obs: ObservedMatrix) -> float:
    Y = np.full(obs.shape, float(np.mean(obs.levels)))
    Y[obs.rows, obs.cols] = obs.levels
    return trace_norm(Y)


def _run_method(method, params, obs, spec: ExperimentSpec, seed):
    if method == "qmc-bif":
        cfg = SolverConfig(lam=params["lambda"], rho=spec.rho, rank=params["rank"],
                           inner_tol=spec.inner_tol, outer_tol=spec.outer_tol, z_tol=spec.z_tol,
                           max_inner=spec.max_inner, max_outer=spec.max_outer,
                           max_z_iters=spec.max_z_iters, seed=seed,
                           multiplier_first=spec.multiplier_first,
                           objective_every=max(1, spec.max_outer))
        return qmc_bif(obs, cfg)
    if method == "trace-ball":
        cfg = BaselineConfig("trace_ball", trace_radius=params["k"], tol=spec.baseline_tol,
                             max_iters=spec.baseline_max_iters, seed=seed)
        return qmc_trace_ball(obs, cfg)
    cfg = BaselineConfig("fixed_rank", rank=params["rank"], tol=spec.baseline_tol,
                         max_iters=spec.baseline_max_iters, seed=seed)
    return qmc_fixed_rank(obs, cfg)


def _resolve(task: Task, obs):
    p = dict(task.params)
    spec = task.spec
    if "lambda" in p and spec.lambda_unit == "sqrt_omega":
        p["lambda"] = p["lambda"] * math.sqrt(obs.size)
    if "k" in p and spec.k_unit == "filled_trace":
        p["k"] = p["k"] * filled_trace_scale(obs)
    return p


def run_task(task: Task) -> list[ResultRow]:
    spec = task.spec
    rho = spec.rho if task.method == "qmc-bif" else None

    def row(p, metric, value, iters, wall, status):
        return ResultRow(task.dataset_id, task.method, p.get("lambda"), rho, p.get("rank"),
                         p.get("k"), task.seed, metric, value, iters, wall, status)

    p = dict(task.params)
    try:
        obs, truth, hold = _build_data(spec, task.data)
        p = _resolve(task, obs)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = _run_method(task.method, p, obs, spec, task.seed)
    except Exception as exc:  # recorded, never fatal for the sweep
        msg = f"error: {type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
        return [row(p, "objective", float("nan"), 0, 0.0, msg)]
    status = "converged" if res.converged else "max_iter"
    out = []
    if truth is not None:
        out.append(("relative_error", relative_error(res.x_star, truth)))
    if hold is not None:
        out.append(("rmse", rmse(res.x_star, hold, spec.clamp)))
    fin = res.final_objective
    tn = fin.trace_norm if np.isfinite(fin.trace_norm) else trace_norm(res.x_star)
    out.append(("trace_norm", tn))
    out.append(("objective", fin.total))
    return [row(p, m, v, res.outer_iters, res.wall_time, status) for m, v in out]


def _grid(spec: ExperimentSpec, method):
    if method == "qmc-bif":
        return [{"lambda": lam, "rank": r} for r in spec.rank_grid for lam in spec.lambda_grid]
    if method == "trace-ball":
        return [{"k": k} for k in spec.k_grid]
    return [{"rank": r} for r in spec.rank_grid]


def _dataset_id(spec, data):
    if spec.dataset == "synthetic":
        return (f"synthetic-m{spec.m}-n{spec.n}-r{data['rank']}-q{spec.levels}"
                f"-miss{spec.missing:g}-noise{spec.noise:g}")
    base = f"movielens-hold{spec.holdout:g}"
    if spec.submatrix:
        base = f"movielens-{spec.submatrix[0]}x{spec.submatrix[1]}-hold{spec.holdout:g}"
    stage = data.get("stage")
    return f"{base}-val{spec.validation:g}" if stage == "val" else base


def build_tasks(spec: ExperimentSpec, stage=None, chosen=None) -> list[Task]:
    """Expand a spec into tasks.

    ``chosen`` maps method -> params for the refit stage of validation tuning.
    """
    tasks = []
    ranks = spec.ranks if spec.dataset == "synthetic" else (None,)
    for rank in ranks:
        for rep in range(spec.repetitions):
            seed = spec.seed_base + rep
            data = {"rank": rank, "seed": seed, "stage": stage}
            for method in spec.methods:
                grid = [chosen[method]] if chosen is not None else _grid(spec, method)
                for params in grid:
                    tasks.append(Task(len(tasks), _dataset_id(spec, data), data, method,
                                      params, seed, spec))
    return tasks


def _execute(tasks, workers, sink, progress):
    pending = {}
    next_idx = 0
    done = 0

    def drain():
        nonlocal next_idx
        while next_idx in pending:
            sink(pending.pop(next_idx))
            next_idx += 1

    def report(task, rows):
        nonlocal done
        done += 1
        if progress is not None:
            val = rows[0].value if rows else float("nan")
            print(f"[{done}/{len(tasks)}] {task.dataset_id} {task.method} {task.params} "
                  f"seed={task.seed} {rows[0].metric}={val:.6g} {rows[0].status}",
                  file=progress, flush=True)

    if workers <= 1:
        for t in tasks:
            rows = run_task(t)
            report(t, rows)
            pending[t.index] = rows
            drain()
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(run_task, t): t for t in tasks}
        for fut in as_completed(futures):
            t = futures[fut]
            rows = fut.result()
            report(t, rows)
            pending[t.index] = rows
            drain()


def _best_params(spec, rows, method, metric):
    for (_, mth), rec in select_best(rows, metric).items():
        if mth == method:
            return _grid(spec, method)[rec["position"]]
    return None


def run_experiments(spec: ExperimentSpec, workers=1, output=None, progress=None):
    """Run every grid point and repetition; returns all rows in grid order.

    When ``output`` is given rows are written to that CSV as soon as all
    earlier grid points have finished, so the file order never depends on
    the worker count.
    """
    all_rows: list[ResultRow] = []
    fh = writer = None
    if output is not None:
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        fh = open(output, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)

    def sink(rows):
        all_rows.extend(rows)
        if writer is not None:
            writer.writerows(r.cells() for r in rows)
            fh.flush()

    try:
        if spec.validation > 0:
            val_rows = []

            def val_sink(rows):
                val_rows.extend(rows)
                sink(rows)

            _execute(build_tasks(spec, stage="val"), workers, val_sink, progress)
            chosen = {}
            for method in spec.methods:
                params = _best_params(spec, val_rows, method, "rmse")
                if params is not None:
                    chosen[method] = params
            _execute(build_tasks(replace(spec, methods=tuple(chosen)), chosen=chosen),
                     workers, sink, progress)
        else:
            _execute(build_tasks(spec), workers, sink, progress)
    finally:
        if fh is not None:
            fh.close()
    return all_rows


def _params_of(row: ResultRow):
    if row.method == "qmc-bif":
        return {"lambda": row.lam, "rank": row.rank}
    if row.method == "trace-ball":
        return {"k": row.k}
    return {"rank": row.rank}


def select_best(rows, metric):
    """Best-of-grid per ``(dataset, method)`` by mean ``metric`` over seeds.

    Grid points are matched across seeds by their position within each
    seed's rows, since lambda or k may be rescaled per instance. Each record
    holds the mean, per-seed values, mean wall time, the grid ``position``
    and the resolved ``params`` of the first seed.
    """
    groups = {}
    for r in rows:
        if r.metric != metric or r.status.startswith("error"):
            continue
        groups.setdefault((r.dataset, r.method, r.seed), []).append(r)
    cells = {}
    for (ds, mth, _), rs in groups.items():
        for pos, r in enumerate(rs):
            cells.setdefault((ds, mth, pos), []).append(r)
    best = {}
    for (ds, mth, pos), rs in cells.items():
        vals = np.array([r.value for r in rs])
        if not np.all(np.isfinite(vals)):
            continue
        rec = {"mean": float(vals.mean()), "values": vals.tolist(), "position": pos,
               "params": _params_of(rs[0]),
               "wall_time": float(np.mean([r.wall_time for r in rs]))}
        cur = best.get((ds, mth))
        if cur is None or rec["mean"] < cur["mean"]:
            best[(ds, mth)] = rec
    return best


def summarize(rows, metric=None) -> str:
    """Tables-1/2 style text: best-of-grid mean metric and runtime per method."""
    if metric is None:
        metric = "relative_error" if any(r.metric == "relative_error" for r in rows) else "rmse"
    best = select_best(rows, metric)
    out = io.StringIO()
    out.write(f"{'dataset':<48} {'method':<12} {metric:>14} {'wall_time_s':>12}  params\n")
    for (ds, mth), rec in sorted(best.items()):
        out.write(f"{ds:<48} {mth:<12} {rec['mean']:>14.6f} {rec['wall_time']:>12.3f}  {rec['params']}\n")
    return out.getvalue()


def read_rows(path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        for c in reader:
            opt = lambda s, f: f(s) if s != "" else None
            rows.append(ResultRow(c[0], c[1], opt(c[2], float), opt(c[3], float),
                                  opt(c[4], int), opt(c[5], float), int(c[6]), c[7],
                                  float(c[8]), int(c[9]), float(c[10]), c[11]))
    return rows
