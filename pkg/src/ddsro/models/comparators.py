"""Comparator solvers: deterministic, scenario stochastic program, box ARO."""

from __future__ import annotations

import time

import numpy as np

from ..lp import INFEASIBLE, OPTIMAL, LinearProgram, solve_milp
from ..report import SolveReport
from ..sets import box_from_data, single_union
from .problem import CompactProblem

SCENARIO_CAP = 500


class ComparatorError(ValueError):
    pass


def _check(sol, what):
    if sol.status == INFEASIBLE:
        raise ComparatorError(f"{what} is infeasible")
    if sol.status != OPTIMAL:
        raise ComparatorError(f"{what} ended with status {sol.status}")


def solve_deterministic(p: CompactProblem, u_fixed) -> SolveReport:
    """Single MILP with the uncertainty fixed at ``u_fixed`` (typically the data mean)."""
    t0 = time.perf_counter()
    u = np.asarray(u_fixed, float).ravel()
    if u.size != p.dim_u:
        raise ComparatorError(f"u has length {u.size}, expected {p.dim_u}")
    sol = solve_milp(p.fixed_u_program(u))
    _check(sol, "deterministic problem")
    x, y = sol.x[:p.n_x], sol.x[p.n_x:]
    return SolveReport("deterministic", p.user_objective(sol.objective), x.tolist(),
                       wall_time=time.perf_counter() - t0, worst_u={"fixed": u.tolist()},
                       second_stage={"fixed": y.tolist()}, sense=p.sense)


def scenario_program(p: CompactProblem, scenarios, probs) -> LinearProgram:
    """Extensive form: one recourse copy per scenario."""
    U = np.atleast_2d(np.asarray(scenarios, float))
    w = np.asarray(probs, float).ravel()
    K = U.shape[0]
    n1, n3 = p.n_x, p.n_y
    ka, rela = p.first_stage_rows()
    kr, relr = p.recourse_rows()
    m1, m2 = ka.size, kr.size
    n = n1 + K * n3
    A = np.zeros((m1 + K * m2, n))
    rhs = np.zeros(m1 + K * m2)
    A[:m1, :n1] = p.A[ka]
    rhs[:m1] = p.d[ka]
    c = np.zeros(n)
    c[:n1] = p.c
    for k in range(K):
        rows = slice(m1 + k * m2, m1 + (k + 1) * m2)
        cols = slice(n1 + k * n3, n1 + (k + 1) * n3)
        A[rows, :n1] = p.T[kr]
        A[rows, cols] = p.W[kr]
        rhs[rows] = (p.h - p.M @ U[k])[kr]
        c[cols] = w[k] * p.b
    hi = np.concatenate([p.x_ub, np.full(K * n3, np.inf)])
    integ = np.concatenate([p.x_integer, np.zeros(K * n3, bool)])
    return LinearProgram(c, A, rela + relr * K, rhs, None, hi, integ)


def solve_scenario_sp(p: CompactProblem, scenarios, probs=None, cap: int = SCENARIO_CAP) -> SolveReport:
    """Scenario-based two-stage stochastic program (equal weights by default)."""
    t0 = time.perf_counter()
    U = np.atleast_2d(np.asarray(scenarios, float))
    K = U.shape[0]
    if K > cap:
        raise ComparatorError(f"{K} scenarios exceed the cap of {cap}; subsample the data first")
    if U.shape[1] != p.dim_u:
        raise ComparatorError(f"scenarios have dimension {U.shape[1]}, expected {p.dim_u}")
    w = np.full(K, 1.0 / K) if probs is None else np.asarray(probs, float).ravel()
    if w.size != K or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ComparatorError("scenario probabilities must be non-negative and sum to 1")
    sol = solve_milp(scenario_program(p, U, w))
    _check(sol, "scenario program")
    return SolveReport("scenario_sp", p.user_objective(sol.objective), sol.x[:p.n_x].tolist(),
                       wall_time=time.perf_counter() - t0, flags={"scenarios": K}, sense=p.sense)


def solve_box_aro(p: CompactProblem, points, zeta: float = 1e-3, max_iters: int = 50, **kw) -> SolveReport:
    """Two-stage robust problem over the bounding box of ``points``."""
    from ..robust import solve_ddanro

    rep = solve_ddanro(p, single_union(box_from_data(points)), zeta, max_iters, **kw)
    rep.method = "box_aro"
    return rep
