import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_observed
from oracles import golden_section, naive_nll_terms, prox_grad_min, ridge_rows
from qmcbif.data import generate_synthetic
from qmcbif.likelihood import ObservedMatrix, trace_norm
from qmcbif.quantization import build_uniform_scheme
from qmcbif.solver import (ConvergenceWarning, FactorPair, SingularSystemError, SolverConfig,
                           default_lambda, init_factors, inner_alternation, inner_objective,
                           qmc_bif, solve_z_subproblem, update_factor_u, update_factor_v)


def test_init_factors_deterministic_and_shaped():
    a = init_factors(3, 4, 2, 7)
    b = init_factors(3, 4, 2, 7)
    np.testing.assert_array_equal(a.U, b.U)
    np.testing.assert_array_equal(a.V, b.V)
    assert a.U.shape == (3, 2) and a.V.shape == (4, 2)
    assert a.U.min() >= 0 and a.U.max() <= 1 and a.V.min() >= 0 and a.V.max() <= 1


@pytest.mark.parametrize("shape", [(3, 4, 0), (3, 4, 5), (0, 4, 1)])
def test_init_factors_rejects_bad_shapes(shape):
    with pytest.raises(ValueError):
        init_factors(*shape, seed=0)


def _stationarity_u(U, Z, Lam, V, rho, lam):
    return np.linalg.norm(lam * U - (rho * Z + Lam) @ V + rho * U @ (V.T @ V))


def test_update_u_orthonormal_collapse(rng):
    Z = rng.normal(size=(5, 6))
    V, _ = np.linalg.qr(rng.normal(size=(6, 2)))
    U = update_factor_u(Z, np.zeros_like(Z), V, 1.0, 0.0)
    np.testing.assert_allclose(U, Z @ V, atol=1e-12)


def test_update_large_lambda_vanishes(rng):
    Z = rng.normal(size=(5, 6))
    Lam = rng.normal(size=(5, 6))
    V = rng.normal(size=(6, 2))
    U = rng.normal(size=(5, 2))
    assert np.abs(update_factor_u(Z, Lam, V, 1.0, 1e12)).max() < 1e-10
    assert np.abs(update_factor_v(Z, Lam, U, 1.0, 1e12)).max() < 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_updates_match_ridge_oracle(seed):
    rng = np.random.default_rng(seed)
    Z, Lam = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    V, U = rng.normal(size=(6, 2)), rng.normal(size=(5, 2))
    rho, lam = rng.uniform(0.1, 3), rng.uniform(0.01, 2)
    Uu = update_factor_u(Z, Lam, V, rho, lam)
    np.testing.assert_allclose(Uu, ridge_rows(rho * Z + Lam, V, rho, lam), atol=1e-10)
    Vv = update_factor_v(Z, Lam, U, rho, lam)
    np.testing.assert_allclose(Vv, ridge_rows((rho * Z + Lam).T, U, rho, lam), atol=1e-10)
    assert _stationarity_u(Uu, Z, Lam, V, rho, lam) <= 1e-8 * (1 + np.linalg.norm(Uu))
    assert _stationarity_u(Vv, Z.T, Lam.T, U, rho, lam) <= 1e-8 * (1 + np.linalg.norm(Vv))


def test_update_singular_system_reported():
    Z = np.ones((3, 4))
    V = np.zeros((4, 2))
    with pytest.raises(SingularSystemError):
        update_factor_u(Z, np.zeros_like(Z), V, 1.0, 0.0)


def test_inner_alternation_monotone_and_fixed_point(rng):
    Z, Lam = rng.normal(size=(6, 7)), 0.1 * rng.normal(size=(6, 7))
    cfg = SolverConfig(lam=0.5, rho=1.3, rank=3, inner_tol=1e-13, max_inner=5000)
    start = init_factors(6, 7, 3, 0)
    before = inner_objective(Z, Lam, start, cfg.rho, cfg.lam)
    fp, sweeps = inner_alternation(Z, Lam, start, cfg, check_monotone=True)
    after = inner_objective(Z, Lam, fp, cfg.rho, cfg.lam)
    assert after <= before
    assert sweeps > 1
    again, sweeps2 = inner_alternation(Z, Lam, fp, SolverConfig(lam=0.5, rho=1.3, rank=3, inner_tol=1e-6))
    assert sweeps2 == 1
    assert np.abs(again.U - fp.U).max() < 1e-10 and np.abs(again.V - fp.V).max() < 1e-10


def test_inner_alternation_zero_lambda_warns(rng):
    Z = np.zeros((4, 5))
    fp = FactorPair(np.zeros((4, 2)), np.zeros((5, 2)))
    with pytest.warns(RuntimeWarning):
        out, _ = inner_alternation(Z, np.zeros_like(Z), fp, SolverConfig(lam=0.0, rank=2))
    assert np.all(np.isfinite(out.U))


def _scalar_prox(t, lo, hi, rho):
    h = lambda x: naive_nll_terms(np.array([x]), lo, hi)[0] + 0.5 * rho * (x - t) ** 2
    return golden_section(h, t - 30, t + 30)


def test_z_step_unobserved_entries_copy_target(rng):
    s = build_uniform_scheme(5)
    obs = ObservedMatrix(3, 3, [0, 1], [0, 1], [2, 4], s)
    target = rng.normal(size=(3, 3))
    Z = solve_z_subproblem(obs, target, 1.0)
    off = ~obs.mask()
    assert np.array_equal(Z[off], target[off])


def test_z_step_matches_scalar_oracle():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        obs = random_observed(rng, 3, 3, num_levels=6, frac=0.7)
        target = rng.normal(3, 3, size=(3, 3))
        Z = solve_z_subproblem(obs, target, 1.0)
        for i, j, lo, hi in zip(obs.rows, obs.cols, obs.lower, obs.upper):
            assert Z[i, j] == pytest.approx(_scalar_prox(target[i, j], lo, hi, 1.0), abs=1e-6)


def test_z_step_nonconvergence_warns(rng):
    obs = random_observed(rng, 3, 3, num_levels=6, frac=1.0)
    with pytest.warns(ConvergenceWarning, match="residual"):
        solve_z_subproblem(obs, np.full((3, 3), 40.0), 0.01, z_tol=1e-12, max_z_iters=2)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(rho=0)
    with pytest.raises(ValueError):
        SolverConfig(lam=-1)
    with pytest.raises(ValueError):
        SolverConfig(outer_tol=0)
    obs = random_observed(np.random.default_rng(0), 3, 4)
    with pytest.raises(ValueError):
        SolverConfig(rank=4).resolve(obs)
    assert SolverConfig(rank=2).resolve(obs).lam == pytest.approx(default_lambda(obs))


def test_qmc_bif_rank_one_full_observation_matches_oracle():
    inst = generate_synthetic(5, 5, 1, 3, 0.0, 0.0, seed=3)
    obs = inst.observed
    lam = 0.5
    res = qmc_bif(obs, SolverConfig(lam=lam, rank=3, outer_tol=1e-9, max_outer=5000))
    assert res.converged
    ref, _ = prox_grad_min(obs.rows, obs.cols, obs.lower, obs.upper, obs.shape, lam)
    assert np.linalg.norm(res.x_star - ref) / np.linalg.norm(ref) < 1e-3
    assert res.factors.U.shape == (5, 3) and res.factors.V.shape == (5, 3)


def test_qmc_bif_larger_lambda_smaller_trace():
    inst = generate_synthetic(20, 25, 2, 10, 0.2, 0.0, seed=1)
    small = qmc_bif(inst.observed, SolverConfig(lam=0.5, rank=5))
    large = qmc_bif(inst.observed, SolverConfig(lam=20.0, rank=5))
    assert trace_norm(large.x_star) < trace_norm(small.x_star)


def test_qmc_bif_seeds_agree_on_observed():
    inst = generate_synthetic(20, 25, 2, 10, 0.2, 0.0, seed=2)
    cfg = dict(lam=2.0, rank=5, outer_tol=1e-7, max_outer=2000)
    a = qmc_bif(inst.observed, SolverConfig(seed=0, **cfg))
    b = qmc_bif(inst.observed, SolverConfig(seed=1, **cfg))
    obs = inst.observed
    assert np.max(np.abs(obs.take(a.x_star) - obs.take(b.x_star))) < 1e-3


def test_qmc_bif_trace_and_counters():
    inst = generate_synthetic(15, 20, 2, 5, 0.1, 0.0, seed=4)
    res = qmc_bif(inst.observed, SolverConfig(lam=1.0, rank=4))
    assert res.converged
    assert len(res.objective_trace) == res.outer_iters
    assert res.gap_trace[-1] < 1e-5
    assert res.total_inner_iters >= res.outer_iters
    assert res.total_z_iters > 0
    assert res.wall_time >= 0
    totals = np.array([b.total for b in res.objective_trace])
    # nonincreasing after the first outer iteration, up to tolerance
    assert np.all(np.diff(totals[1:]) <= 1e-6 * np.abs(totals[1:-1]) + 1e-6)


def test_qmc_bif_objective_every():
    inst = generate_synthetic(15, 20, 2, 5, 0.1, 0.0, seed=4)
    res = qmc_bif(inst.observed, SolverConfig(lam=1.0, rank=4, objective_every=5))
    assert len(res.objective_trace) == res.outer_iters // 5 + (res.outer_iters % 5 != 0)


def test_both_update_orders_reach_same_objective():
    inst = generate_synthetic(15, 20, 2, 10, 0.1, 0.0, seed=5)
    a = qmc_bif(inst.observed, SolverConfig(lam=1.0, rank=4, outer_tol=1e-7, max_outer=2000))
    b = qmc_bif(inst.observed, SolverConfig(lam=1.0, rank=4, outer_tol=1e-7, max_outer=2000,
                                            multiplier_first=False))
    assert a.final_objective.total == pytest.approx(b.final_objective.total, rel=1e-5)


def test_nonconvergence_reported_not_raised():
    inst = generate_synthetic(15, 20, 2, 5, 0.1, 0.0, seed=4)
    res = qmc_bif(inst.observed, SolverConfig(lam=1.0, rank=4, max_outer=2))
    assert not res.converged
    assert res.outer_iters == 2


def _lambda_max(obs):
    # spectral norm of the NLL gradient at X = 0, from the naive logistic formula
    from scipy.special import expit
    lo, up = expit(obs.lower), expit(obs.upper)
    dens = lambda p: p * (1 - p)
    G = np.zeros(obs.shape)
    G[obs.rows, obs.cols] = (dens(up) - dens(lo)) / (up - lo)
    return np.linalg.norm(G, 2)


def test_zero_screen_exact_above_lambda_max():
    inst = generate_synthetic(20, 25, 2, 10, 0.2, 0.0, seed=6)
    obs = inst.observed
    lmax = _lambda_max(obs)
    screened = qmc_bif(obs, SolverConfig(lam=1.01 * lmax, rank=5))
    assert screened.converged and screened.outer_iters == 0
    assert not screened.x_star.any()
    assert screened.final_objective.total == pytest.approx(screened.final_objective.data_term)
    plain = qmc_bif(obs, SolverConfig(lam=1.01 * lmax, rank=5, zero_screen=False,
                                      outer_tol=1e-8, max_outer=5000))
    assert trace_norm(plain.x_star) < 1e-4
    assert plain.final_objective.total >= screened.final_objective.total - 1e-8
    below = qmc_bif(obs, SolverConfig(lam=0.9 * lmax, rank=5))
    assert below.outer_iters > 0 and trace_norm(below.x_star) > 1e-3
