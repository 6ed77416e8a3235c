"""QMC-BIF: trace-norm penalized quantized completion via bilinear ALM.

The penalized problem ``min_X -F_Y(X) + lam ||X||_*`` is rewritten with
``X = U V^T`` and ``||X||_*`` replaced by ``(||U||_F^2 + ||V||_F^2) / 2``.
An augmented Lagrangian couples a free copy ``Z`` of ``X`` to ``U V^T``.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from . import kernels
from .likelihood import (ObjectiveBreakdown, ObservedMatrix, grad_neg_log_likelihood,
                         penalized_objective)

SINGULAR_LAMBDA = 1e-10


class SingularSystemError(np.linalg.LinAlgError):
    """The ridge system of a factor update is not positive definite."""


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FactorPair:
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[1] != self.V.shape[1]:
            raise ValueError("factors must be 2-D with a shared inner dimension")
        if self.U.shape[1] < 1:
            raise ValueError("inner dimension must be at least 1")

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def product(self) -> np.ndarray:
        return self.U @ self.V.T


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for :func:`qmc_bif`.

    ``lam=None`` resolves to ``0.1 * sqrt(|Omega|)`` at solve time.
    ``multiplier_first`` keeps the published ordering (multiplier step
    before the Z step); set it False for the textbook ALM order.
    ``objective_every`` controls how often the SVD-based objective is
    recorded; the final iterate is always recorded.
    ``zero_screen`` returns ``X* = 0`` without iterating when
    ``lam >= ||grad F(0)||_2``, where zero is the exact minimizer.
    """

    lam: float | None = None
    rho: float = 1.0
    rank: int = 10
    inner_tol: float = 1e-6
    outer_tol: float = 1e-5
    z_tol: float = 1e-9
    max_inner: int = 100
    max_outer: int = 300
    max_z_iters: int = 500
    seed: int = 0
    multiplier_first: bool = True
    objective_every: int = 1
    zero_screen: bool = True

    def __post_init__(self):
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if int(self.rank) != self.rank or self.rank < 1:
            raise ValueError("rank must be a positive integer")
        for name in ("inner_tol", "outer_tol", "z_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_inner", "max_outer", "max_z_iters", "objective_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    def resolve(self, obs: ObservedMatrix) -> "SolverConfig":
        if self.rank > min(obs.shape):
            raise ValueError(f"rank {self.rank} exceeds min(m, n) = {min(obs.shape)}")
        if self.lam is None:
            return replace(self, lam=default_lambda(obs))
        return self


def default_lambda(obs: ObservedMatrix) -> float:
    return 0.1 * np.sqrt(obs.size)


@dataclass
class SolveResult:
    x_star: np.ndarray
    factors: FactorPair | None
    multiplier: np.ndarray | None
    objective_trace: list[ObjectiveBreakdown]
    outer_iters: int
    total_inner_iters: int
    total_z_iters: int
    wall_time: float
    converged: bool
    method: str = "qmc-bif"
    gap_trace: list[float] = field(default_factory=list)
    lagrangian_trace: list[float] = field(default_factory=list)

    @property
    def final_objective(self) -> ObjectiveBreakdown:
        return self.objective_trace[-1]


def init_factors(m: int, n: int, r: int, seed) -> FactorPair:
    """Uniform ``[0, 1]`` factors ``U (m x r)`` and ``V (n x r)``."""
    if min(m, n, r) < 1 or r > min(m, n):
        raise ValueError(f"invalid factor shape (m={m}, n={n}, r={r})")
    rng = np.random.default_rng(seed)
    U = rng.uniform(0.0, 1.0, size=(m, r))
    V = rng.uniform(0.0, 1.0, size=(n, r))
    return FactorPair(U, V)


def _ridge_solve(B, W, rho, lam):
    # returns B @ W @ (rho W^T W + lam I)^{-1}
    r = W.shape[1]
    gram = rho * (W.T @ W) + lam * np.eye(r)
    try:
        c = linalg.cho_factor(gram, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularSystemError("ridge system is not positive definite") from exc
    if np.linalg.cond(gram) > 1e14:
        raise SingularSystemError("ridge system is numerically singular")
    return linalg.cho_solve(c, (B @ W).T, check_finite=False).T


def update_factor_u(Z, multiplier, V, rho, lam):
    """Minimizer of ``lam/2 ||U||^2 + rho/2 ||Z - U V^T + Lambda/rho||^2``."""
    Z = np.asarray(Z, dtype=float)
    if Z.shape != np.shape(multiplier) or V.shape[0] != Z.shape[1]:
        raise ValueError("inconsistent shapes for U update")
    return _ridge_solve(rho * Z + multiplier, V, rho, lam)


def update_factor_v(Z, multiplier, U, rho, lam):
    """Same as :func:`update_factor_u` for ``V`` (acts on ``Z^T``)."""
    Z = np.asarray(Z, dtype=float)
    if Z.shape != np.shape(multiplier) or U.shape[0] != Z.shape[0]:
        raise ValueError("inconsistent shapes for V update")
    return _ridge_solve((rho * Z + multiplier).T, U, rho, lam)


def inner_objective(Z, multiplier, factors: FactorPair, rho, lam) -> float:
    U, V = factors.U, factors.V
    R = Z - U @ V.T + multiplier / rho
    return 0.5 * lam * (np.vdot(U, U) + np.vdot(V, V)) + 0.5 * rho * np.vdot(R, R)


def inner_alternation(Z, multiplier, factors: FactorPair, config: SolverConfig,
                      check_monotone=False):
    """Alternate the closed-form U and V updates until the factors settle.

    Returns ``(factors, sweeps)``. With ``check_monotone`` the inner
    objective is re-evaluated after every half step and an
    ``AssertionError`` is raised if it increases.
    """
    lam, rho = config.lam, config.rho
    U, V = factors.U, factors.V
    sweeps = 0
    prev = inner_objective(Z, multiplier, factors, rho, lam) if check_monotone else None
    Z = np.asarray(Z, dtype=float)
    if Z.shape != np.shape(multiplier) or U.shape[0] != Z.shape[0] or V.shape[0] != Z.shape[1]:
        raise ValueError("inconsistent shapes for factor updates")
    B = rho * Z + multiplier  # shared by both updates and all sweeps
    for sweeps in range(1, config.max_inner + 1):
        try:
            U_new = _ridge_solve(B, V, rho, lam)
            V_new = _ridge_solve(B.T, U_new, rho, lam)
        except SingularSystemError:
            if lam > 0:
                raise
            warnings.warn("singular factor update with lam=0; using lam=1e-10",
                          RuntimeWarning, stacklevel=2)
            lam = SINGULAR_LAMBDA
            U_new = _ridge_solve(B, V, rho, lam)
            V_new = _ridge_solve(B.T, U_new, rho, lam)
        if check_monotone:
            half = inner_objective(Z, multiplier, FactorPair(U_new, V), rho, lam)
            full = inner_objective(Z, multiplier, FactorPair(U_new, V_new), rho, lam)
            slack = 1e-10 * (1.0 + abs(prev))
            assert half <= prev + slack and full <= half + slack, "inner objective increased"
            prev = full
        du = np.linalg.norm(U_new - U) / (1.0 + np.linalg.norm(U_new))
        dv = np.linalg.norm(V_new - V) / (1.0 + np.linalg.norm(V_new))
        U, V = U_new, V_new
        if max(du, dv) < config.inner_tol:
            break
    return FactorPair(U, V), sweeps


def _solve_z(obs: ObservedMatrix, target, rho, z_tol, max_z_iters, warm_start):
    Z = np.array(target, dtype=float, copy=True)
    t = obs.take(target)
    x0 = obs.take(warm_start)
    x, sweeps, worst = kernels.prox_solve(t, obs.lower, obs.upper, float(rho), x0,
                                          float(z_tol), int(max_z_iters))
    Z[obs.rows, obs.cols] = x
    return Z, sweeps, worst


def solve_z_subproblem(obs: ObservedMatrix, target, rho, z_tol=1e-9, max_z_iters=500,
                       warm_start=None):
    """``argmin_X -F_Y(X) + rho/2 ||X - target||_F^2``.

    Unobserved entries equal ``target``; each observed entry is a 1-D
    strongly convex problem solved by backtracking gradient descent.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    target = obs._check(target)
    warm = target if warm_start is None else obs._check(warm_start)
    Z, _, worst = _solve_z(obs, target, rho, z_tol, max_z_iters, warm)
    if worst > z_tol:
        warnings.warn(f"Z-subproblem stopped at max_z_iters with residual {worst:.3e}",
                      ConvergenceWarning, stacklevel=2)
    return Z


def augmented_lagrangian(obs, Z, factors, multiplier, rho, lam) -> float:
    from .likelihood import neg_log_likelihood

    U, V = factors.U, factors.V
    D = Z - U @ V.T
    return (neg_log_likelihood(Z, obs) + 0.5 * lam * (np.vdot(U, U) + np.vdot(V, V))
            + np.vdot(multiplier, D) + 0.5 * rho * np.vdot(D, D))


def qmc_bif(obs: ObservedMatrix, config: SolverConfig = SolverConfig(),
            factors: FactorPair | None = None) -> SolveResult:
    """Recover a low-rank matrix from quantized observations.

    Parameters
    ----------
    obs : ObservedMatrix
        Observed levels and their scheme.
    config : SolverConfig
        Regularization, ALM penalty, rank estimate, tolerances and seed.
    factors : FactorPair, optional
        Starting factors; drawn uniformly on ``[0, 1]`` from ``config.seed``
        when omitted.

    Returns
    -------
    SolveResult
        ``x_star`` is the final ``Z`` iterate.
    """
    config = config.resolve(obs)
    lam, rho = config.lam, config.rho
    t0 = time.perf_counter()
    m, n = obs.shape
    if factors is None:
        factors = init_factors(m, n, config.rank, config.seed)
    if config.zero_screen and lam > 0:
        # 0 is optimal iff -grad F(0) lies in lam * (subdifferential of ||.||_* at 0)
        X0 = np.zeros((m, n))
        G0 = grad_neg_log_likelihood(X0, obs)
        if np.linalg.norm(G0, 2) <= lam:
            zero = FactorPair(np.zeros_like(factors.U), np.zeros_like(factors.V))
            return SolveResult(X0, zero, -G0, [penalized_objective(X0, obs, lam)], 0, 0,
                               0, time.perf_counter() - t0, True, gap_trace=[],
                               lagrangian_trace=[])
    Z = obs.dense_levels()
    Lam = np.zeros((m, n))
    trace, gaps, lagr = [], [], []
    inner_total = z_total = 0
    converged = False
    k = 0
    for k in range(1, config.max_outer + 1):
        factors, sweeps = inner_alternation(Z, Lam, factors, config)
        inner_total += sweeps
        W = factors.product()
        if config.multiplier_first:
            Lam = Lam + rho * (Z - W)
            Z, zs, _ = _solve_z(obs, W - Lam / rho, rho, config.z_tol, config.max_z_iters, Z)
        else:
            Z, zs, _ = _solve_z(obs, W - Lam / rho, rho, config.z_tol, config.max_z_iters, Z)
            Lam = Lam + rho * (Z - W)
        z_total += zs
        gap = np.linalg.norm(Z - W) / (1.0 + np.linalg.norm(Z))
        gaps.append(float(gap))
        converged = gap < config.outer_tol
        if converged or k % config.objective_every == 0 or k == config.max_outer:
            trace.append(penalized_objective(Z, obs, lam))
            lagr.append(float(augmented_lagrangian(obs, Z, factors, Lam, rho, lam)))
        if converged:
            break
    return SolveResult(
        x_star=Z,
        factors=factors,
        multiplier=Lam,
        objective_trace=trace,
        outer_iters=k,
        total_inner_iters=inner_total,
        total_z_iters=z_total,
        wall_time=time.perf_counter() - t0,
        converged=converged,
        gap_trace=gaps,
        lagrangian_trace=lagr,
    )
