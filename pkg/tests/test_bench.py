import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmcbif.bench import (CSV_HEADER, ExperimentSpec, ResultRow, SpecError, build_tasks,
                          format_spec, parse_spec, read_rows, relative_error, rmse,
                          run_experiments, select_best, summarize)
from qmcbif.likelihood import ObservedMatrix
from qmcbif.quantization import build_uniform_scheme

TINY = """
# tiny sweep
dataset = synthetic
m = 10
n = 12
ranks = 2
levels = 5
missing = 0.2
methods = qmc-bif, trace-ball, fixed-rank
lambda_grid = 0.5, 2
rank_grid = 3
k_grid = 0.8
repetitions = 2
max_outer = 40
baseline_max_iters = 60
"""


def test_relative_error_examples():
    X0 = np.array([[3.0, 4.0]])
    assert relative_error(X0, X0) == 0.0
    assert relative_error(np.zeros((1, 2)), X0) == 1.0
    with pytest.raises(ValueError):
        relative_error(X0, np.zeros((1, 2)))


def test_rmse_examples():
    scheme = build_uniform_scheme(5)
    hold = ObservedMatrix(1, 3, [0, 0, 0], [0, 1, 2], [1, 3, 5], scheme)
    X = np.array([[2.0, 3.0, 9.0]])
    assert rmse(X, hold, clamp=True) == pytest.approx(np.sqrt(1 / 3))
    assert rmse(X, hold, clamp=False) == pytest.approx(np.sqrt(17 / 3))
    assert rmse(np.array([[1.0, 3.0, 5.0]]), hold) == 0.0


def test_spec_round_trip():
    spec = parse_spec(TINY)
    assert spec.lambda_grid == (0.5, 2.0) and spec.methods[1] == "trace-ball"
    assert parse_spec(format_spec(spec)) == spec


@settings(max_examples=25, deadline=None)
@given(lams=st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=4),
       reps=st.integers(1, 5), rho=st.floats(0.01, 10), clamp=st.booleans())
def test_spec_round_trip_property(lams, reps, rho, clamp):
    spec = ExperimentSpec(lambda_grid=tuple(lams), repetitions=reps, rho=rho, clamp=clamp)
    assert parse_spec(format_spec(spec)) == spec


@pytest.mark.parametrize("text,line,key", [
    ("m = 3\nbogus = 1\n", 2, "bogus"),
    ("m = 3\nn = x\n", 2, "n"),
    ("m = 3\n\nm = 4\n", 3, "m"),
    ("just words\n", 1, None),
    ("methods = qmc-bif, sgd\n", 1, "methods"),
    ("repetitions = 0\n", 1, "repetitions"),
    ("m = 3\nsubmatrix = 30, 50\n", 2, "submatrix"),
])
def test_spec_errors_carry_location(text, line, key):
    with pytest.raises(SpecError) as err:
        parse_spec(text)
    assert err.value.lineno == line
    assert err.value.key == key
    assert f"line {line}" in str(err.value)


def test_task_cardinality():
    spec = parse_spec(TINY)
    tasks = build_tasks(spec)
    # per seed: 2 lambdas x 1 rank + 1 k + 1 rank
    assert len(tasks) == 2 * 4
    assert [t.index for t in tasks] == list(range(len(tasks)))


def _non_timing(text):
    lines = text.splitlines()
    out = []
    for ln in lines:
        cells = ln.split(",")
        del cells[CSV_HEADER.index("wall_time")]
        out.append(",".join(cells))
    return "\n".join(out)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("bench")
    spec = parse_spec(TINY)
    rows = run_experiments(spec, workers=1, output=d / "a.csv")
    return spec, rows, d


def test_rows_per_seed_and_metric(tiny_run):
    spec, rows, _ = tiny_run
    rel = [r for r in rows if r.metric == "relative_error"]
    assert len(rel) == 8
    for method in spec.methods:
        seeds = sorted(r.seed for r in rel if r.method == method and r.rank in (None, 3)
                       and (r.lam in (None, 0.5)))
        assert seeds == [0, 1]
    assert {r.metric for r in rows} == {"relative_error", "trace_norm", "objective"}
    assert all(not r.status.startswith("error") for r in rows)


def test_csv_matches_rows(tiny_run):
    _, rows, d = tiny_run
    back = read_rows(d / "a.csv")
    assert [r.cells() for r in back] == [r.cells() for r in rows]


def test_rerun_byte_identical_apart_from_timing(tiny_run, tmp_path):
    spec, _, d = tiny_run
    run_experiments(spec, workers=1, output=tmp_path / "b.csv")
    assert _non_timing((d / "a.csv").read_text()) == _non_timing((tmp_path / "b.csv").read_text())


def test_workers_do_not_change_output(tiny_run, tmp_path):
    spec, _, d = tiny_run
    progress = io.StringIO()
    run_experiments(spec, workers=4, output=tmp_path / "c.csv", progress=progress)
    assert _non_timing((d / "a.csv").read_text()) == _non_timing((tmp_path / "c.csv").read_text())
    assert len(progress.getvalue().splitlines()) == 8


def test_select_best_and_summary(tiny_run):
    _, rows, _ = tiny_run
    best = select_best(rows, "relative_error")
    assert {m for _, m in best} == {"qmc-bif", "trace-ball", "fixed-rank"}
    for (ds, mth), rec in best.items():
        cand = [r.value for r in rows if r.method == mth and r.metric == "relative_error"]
        assert min(cand) <= rec["mean"] + 1e-15
        assert len(rec["values"]) == 2
    text = summarize(rows)
    assert "qmc-bif" in text and "relative_error" in text


def test_error_rows_do_not_abort(tmp_path):
    # rank 30 exceeds min(m, n) for qmc-bif and fixed-rank
    spec = parse_spec(TINY.replace("rank_grid = 3", "rank_grid = 30"))
    rows = run_experiments(spec, output=tmp_path / "e.csv")
    errs = [r for r in rows if r.status.startswith("error")]
    assert {r.method for r in errs} == {"qmc-bif", "fixed-rank"}
    assert any(r.method == "trace-ball" and r.status != "error" for r in rows)
    assert all("," not in r.status for r in errs)
    assert len(read_rows(tmp_path / "e.csv")) == len(rows)
    assert select_best(rows, "relative_error").keys() == {(rows[0].dataset, "trace-ball")}


def test_result_row_formatting():
    r = ResultRow("d", "trace-ball", None, None, None, 0.1, 3, "rmse", 1 / 3, 7, 0.25, "converged")
    assert r.cells() == ["d", "trace-ball", "", "", "", "0.10000000000000001", "3", "rmse",
                         "0.33333333333333331", "7", "0.250000", "converged"]


def test_validation_stage_then_refit(monkeypatch, tmp_path):
    from qmcbif import bench
    from qmcbif.data import RatingsDataset, generate_synthetic

    inst = generate_synthetic(15, 18, 2, 5, 0.3, seed=0)
    ds = RatingsDataset(inst.observed, inst.observed.size, None, None, None)
    monkeypatch.setattr(bench, "load_movielens", lambda path: ds)
    spec = parse_spec("dataset = movielens\nratings_path = fake\nvalidation = 0.2\n"
                      "methods = qmc-bif, fixed-rank\nlambda_grid = 0.3, 3\nrank_grid = 2, 3\n"
                      "max_outer = 60\nbaseline_max_iters = 60\n")
    rows = run_experiments(spec, output=tmp_path / "v.csv")
    val = [r for r in rows if r.metric == "rmse" and "-val" in r.dataset]
    final = [r for r in rows if r.metric == "rmse" and "-val" not in r.dataset]
    assert len(val) == 4 + 2 and len(final) == 2
    for r in final:
        cands = [v for v in val if v.method == r.method]
        best = min(cands, key=lambda v: v.value)
        assert (r.lam, r.rank) == (best.lam, best.rank)
