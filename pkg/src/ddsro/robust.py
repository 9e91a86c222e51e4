"""Decomposition solver for two-stage data-driven stochastic robust MILPs.

The master problem is a relaxation over a growing list of enumerated
uncertainty points (one list per data class) and yields a lower bound.  For
each class and each basic set of its union a subproblem finds the worst-case
recourse cost at the master's first-stage decision; the probability-weighted
per-class maxima give an upper bound, and the maximizing points become the
next cuts.

The subproblem max_{u in U} min_y {b.y : W y >= h - T x - M u} is solved as
one MILP: the inner LP is dualized, u = mu + S (z+ - z-) with binary z, and
the products phi_t z_j are linearized with Glover envelopes.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .dataio import ClassDistribution
from .lp import INFEASIBLE, OPTIMAL, UNBOUNDED, FEAS_TOL, LinearProgram, solve_lp, solve_milp
from .models.problem import CompactProblem, ProblemError
from .report import SolveReport, relative_gap
from .sets import BasicUncertaintySet, UncertaintySetUnion, enumerate_vertices, MAX_ENUM_DIM

log = logging.getLogger(__name__)

DEFAULT_BIG_M = 1e6
SLACK_PENALTY_FACTOR = 1e6
_BIG_M_RETRIES = 3


class RobustError(Exception):
    pass


class InfeasibleInstanceError(RobustError):
    pass


class IncompleteRecourseError(RobustError):
    """The recourse LP is infeasible for some u in an uncertainty set."""

    def __init__(self, message, u=None):
        super().__init__(message)
        self.u = None if u is None else np.asarray(u, float)


# ---------------------------------------------------------------------------
# instance and state


@dataclass
class DdsroInstance:
    problem: CompactProblem
    class_probs: ClassDistribution
    unions: Dict[int, UncertaintySetUnion]
    zeta: float = 1e-3
    max_iters: int = 50
    big_m: float = DEFAULT_BIG_M  # fallback when a dual component is unbounded
    slack: bool = False  # complete-recourse slack mode
    workers: int = 1

    def __post_init__(self):
        if set(self.class_probs.class_ids) != set(self.unions):
            raise RobustError("class ids of probabilities and uncertainty sets differ")
        if not self.zeta > 0:
            raise RobustError("zeta must be positive")
        if self.max_iters < 1:
            raise RobustError("max_iters must be >= 1")
        for s, un in self.unions.items():
            if un.dim != self.problem.dim_u:
                raise RobustError(f"class {s}: set dimension {un.dim} != problem uncertainty dimension "
                                  f"{self.problem.dim_u}")

    @property
    def classes(self) -> List[int]:
        return list(self.class_probs.class_ids)


@dataclass
class MasterState:
    points: Dict[int, List[np.ndarray]]
    iteration: int = 0
    LB: float = -np.inf
    UB: float = np.inf
    x: Optional[np.ndarray] = None


@dataclass
class SubproblemResult:
    value: float
    worst_u: np.ndarray
    phi: np.ndarray
    z_plus: np.ndarray
    z_minus: np.ndarray
    y: Optional[np.ndarray] = None
    flags: Dict[str, object] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# helpers


def with_recourse_slack(p: CompactProblem, penalty: Optional[float] = None) -> CompactProblem:
    """Append one penalized slack per recourse row so every u is recoverable."""
    if penalty is None:
        scale = float(np.max(np.abs(p.b))) if p.b.size else 0.0
        penalty = SLACK_PENALTY_FACTOR * (scale if scale > 0 else 1.0)
    m2 = p.n_rows
    y_names = None if p.y_names is None else list(p.y_names) + [f"slack[{t}]" for t in range(m2)]
    return CompactProblem(p.c, np.concatenate([p.b, np.full(m2, penalty)]), p.A, p.d,
                          np.hstack([p.W, np.eye(m2)]), p.h, p.T, p.M, p.x_integer, p.x_ub, p.sense,
                          p.name, p.x_names, y_names, p.row_names, p.big_m)


def big_m_bound(p: CompactProblem, rows=None, fallback: float = DEFAULT_BIG_M):
    """Per-row bounds M0_t = max{phi_t : W'phi <= b, phi >= 0}.

    Returns ``(values, fallback_rows)``; rows whose LP is unbounded get
    ``fallback`` and are listed in ``fallback_rows``.  ``rows`` restricts the
    computation (other entries are NaN).
    """
    m2 = p.n_rows
    rows = range(m2) if rows is None else rows
    base = LinearProgram(np.zeros(m2), p.W.T, ["<="] * p.n_y, p.b)
    feas = solve_lp(base)
    if feas.status == INFEASIBLE:
        raise ProblemError("dual polytope is empty: the recourse objective is unbounded below")
    values = np.full(m2, np.nan)
    unbounded = []
    for t in rows:
        c = np.zeros(m2)
        c[t] = 1.0
        sol = solve_lp(LinearProgram(c, p.W.T, ["<="] * p.n_y, p.b, sense="max"))
        if sol.status == UNBOUNDED:
            values[t] = fallback
            unbounded.append(int(t))
        else:
            values[t] = max(float(sol.objective), 0.0)
    return values, unbounded


def _find_infeasible_point(p, x, bs):
    """A point of ``bs`` where the recourse LP is infeasible (or mu)."""
    cands = [bs.mu]
    if bs.dim <= MAX_ENUM_DIM:
        cands += enumerate_vertices(bs)
    for u in cands:
        if p.recourse(x, u).status == INFEASIBLE:
            return u
    return bs.mu


# ---------------------------------------------------------------------------
# subproblem


def subproblem_program(x, bs: BasicUncertaintySet, p: CompactProblem, m0, full_envelope: bool = False):
    """Assemble the dualized, Glover-linearized subproblem MILP.

    Variables: [phi (m2) | z+ (d) | z- (d) | G+ | G-], one G pair per nonzero
    entry of M S.  Without ``full_envelope`` only the Glover inequalities that
    can bind for the entry's objective sign are emitted (the others never
    cut off the optimum).
    """
    x = np.asarray(x, float)
    m2, n3, d = p.n_rows, p.n_y, bs.dim
    MS = p.M @ bs.shape
    nz_t, nz_j = np.nonzero(np.abs(MS) > 1e-14)
    k = nz_t.size
    n = m2 + 2 * d + 2 * k
    iphi, izp, izm, igp, igm = 0, m2, m2 + d, m2 + 2 * d, m2 + 2 * d + k

    r = p.h - p.T @ x - p.M @ bs.mu
    c = np.zeros(n)
    c[:m2] = r
    a = MS[nz_t, nz_j]
    c[igp:igp + k] = -a
    c[igm:igm + k] = a

    rows, rel, rhs = [], [], []

    def row(entries, relation, value):
        v = np.zeros(n)
        for idx, coef in entries:
            v[idx] += coef
        rows.append(v)
        rel.append(relation)
        rhs.append(value)

    # dual feasibility W' phi <= b
    for col in range(n3):
        v = np.zeros(n)
        v[:m2] = p.W[:, col]
        rows.append(v)
        rel.append("<=")
        rhs.append(p.b[col])
    for j in range(d):
        row([(izp + j, 1.0), (izm + j, 1.0)], "<=", 1.0)
    for idx, budget in bs.budget_groups():
        if budget < len(idx):
            row([(izp + j, 1.0) for j in idx] + [(izm + j, 1.0) for j in idx], "<=", float(budget))

    for base, zoff, sgn in ((igp, izp, -1.0), (igm, izm, 1.0)):
        for e in range(k):
            t, j = int(nz_t[e]), int(nz_j[e])
            g = base + e
            coef = sgn * a[e]
            if full_envelope or coef > 0:  # maximizing pushes G up: upper envelope binds
                row([(g, 1.0), (iphi + t, -1.0)], "<=", 0.0)
                row([(g, 1.0), (zoff + j, -m0[t])], "<=", 0.0)
            if full_envelope or coef < 0:  # pushes G down: lower envelope binds
                row([(g, 1.0), (iphi + t, -1.0), (zoff + j, -m0[t])], ">=", -m0[t])

    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    hi[izp:izm + d] = 1.0
    bounded_rows = np.unique(nz_t)
    hi[bounded_rows] = m0[bounded_rows]
    integ = np.zeros(n, bool)
    integ[izp:izm + d] = True
    A = np.array(rows).reshape(len(rows), n)
    prog = LinearProgram(c, A, rel, np.array(rhs), lo, hi, integ, sense="max")
    layout = dict(m2=m2, d=d, k=k, izp=izp, izm=izm, rows=bounded_rows)
    return prog, layout


def solve_subproblem(x, bs: BasicUncertaintySet, p: CompactProblem, m0=None, fallback: float = DEFAULT_BIG_M,
                     full_envelope: bool = False) -> SubproblemResult:
    """max over u in ``bs`` of the recourse cost at ``x``, via one MILP.

    ``m0`` is the vector of per-row Glover constants (computed when omitted).
    The result is cross-checked by solving the primal recourse LP at the
    returned worst-case point; if a fallback constant turns out too small it
    is raised tenfold and the MILP re-solved.
    """
    x = np.asarray(x, float)
    flags: Dict[str, object] = {}
    MS = p.M @ bs.shape
    need = np.unique(np.nonzero(np.abs(MS) > 1e-14)[0])
    if m0 is None:
        m0, fb = big_m_bound(p, rows=need, fallback=fallback)
    else:
        m0 = np.asarray(m0, float).copy()
        fb = [int(t) for t in need if m0[t] >= fallback]
    if fb:
        flags["big_m_fallback_rows"] = list(fb)

    for attempt in range(_BIG_M_RETRIES + 1):
        prog, lay = subproblem_program(x, bs, p, m0, full_envelope)
        sol = solve_milp(prog)
        if sol.status == UNBOUNDED:
            u_bad = _find_infeasible_point(p, x, bs)
            raise IncompleteRecourseError(f"incomplete recourse: recourse LP infeasible at u={np.round(u_bad, 6).tolist()}",
                                          u_bad)
        if sol.status != OPTIMAL:
            raise RobustError(f"subproblem MILP ended with status {sol.status}")
        d = lay["d"]
        zp = np.round(sol.x[lay["izp"]:lay["izp"] + d])
        zm = np.round(sol.x[lay["izm"]:lay["izm"] + d])
        u = bs.point(zp - zm)
        prim = p.recourse(x, u)
        if prim.status == INFEASIBLE:
            raise IncompleteRecourseError(f"incomplete recourse: recourse LP infeasible at u={np.round(u, 6).tolist()}", u)
        if prim.status != OPTIMAL:
            raise RobustError(f"recourse LP ended with status {prim.status}")
        value = float(sol.objective)
        mismatch = abs(prim.objective - value) > 1e-6 * (1.0 + abs(value))
        phi = sol.x[:lay["m2"]]
        at_cap = [int(t) for t in fb if phi[t] >= m0[t] * (1 - 1e-9)]
        if not mismatch and not at_cap:
            break
        if not fb or attempt == _BIG_M_RETRIES:
            flags["subproblem_mismatch"] = float(prim.objective - value)
            break
        for t in fb:
            m0[t] *= 10.0
        flags["big_m_raised"] = attempt + 1
    return SubproblemResult(value, u, phi.copy(), zp, zm, prim.x.copy(), flags)


# ---------------------------------------------------------------------------
# master


def master_program(state: MasterState, inst: DdsroInstance, p: CompactProblem) -> LinearProgram:
    """min c.x + eta over x and one recourse copy per (point l, class s)."""
    n1, n3 = p.n_x, p.n_y
    ka, rela = p.first_stage_rows()
    kr, relr = p.recourse_rows()
    m1, m2 = ka.size, kr.size
    S = len(inst.classes)
    L = state_points_len(state)
    nb = L * S
    n = n1 + 1 + nb * n3
    m = m1 + L + nb * m2
    A = np.zeros((m, n))
    rhs = np.zeros(m)
    rel = rela + [">="] * L + relr * nb
    A[:m1, :n1] = p.A[ka]
    rhs[:m1] = p.d[ka]
    ieta = n1
    A[m1:m1 + L, ieta] = 1.0
    r0 = m1 + L
    Tk, Wk, hk, Mk = p.T[kr], p.W[kr], p.h[kr], p.M[kr]
    for l in range(L):
        for k, s in enumerate(inst.classes):
            bidx = l * S + k
            col = n1 + 1 + bidx * n3
            A[m1 + l, col:col + n3] = -inst.class_probs[s] * p.b
            rows = slice(r0 + bidx * m2, r0 + (bidx + 1) * m2)
            A[rows, :n1] = Tk
            A[rows, col:col + n3] = Wk
            rhs[rows] = hk - Mk @ state.points[s][l]
    c = np.zeros(n)
    c[:n1] = p.c
    c[ieta] = 1.0
    lo = np.zeros(n)
    lo[ieta] = -np.inf
    hi = np.full(n, np.inf)
    hi[:n1] = p.x_ub
    integ = np.zeros(n, bool)
    integ[:n1] = p.x_integer
    return LinearProgram(c, A, rel, rhs, lo, hi, integ)


def state_points_len(state: MasterState) -> int:
    lens = {len(v) for v in state.points.values()}
    if len(lens) != 1:
        raise RobustError("every class needs the same number of enumerated points")
    return lens.pop()


def solve_master(state: MasterState, inst: DdsroInstance, p: Optional[CompactProblem] = None):
    """Returns ``(x, eta, LB)``."""
    p = inst.problem if p is None else p
    prog = master_program(state, inst, p)
    sol = solve_milp(prog)
    if sol.status == INFEASIBLE:
        raise InfeasibleInstanceError("master problem infeasible: the instance is infeasible")
    if sol.status == UNBOUNDED:
        raise RobustError("master problem unbounded")
    x = sol.x[:p.n_x].copy()
    x[p.x_integer] = np.round(x[p.x_integer])
    return x, float(sol.x[p.n_x]), float(sol.objective)


# ---------------------------------------------------------------------------
# main loop


def initial_state(inst: DdsroInstance) -> MasterState:
    return MasterState({s: [inst.unions[s].basics[0].mu.copy()] for s in inst.classes})


def solve_ddsro(inst: DdsroInstance, method: str = "ddsro", on_iteration=None) -> SolveReport:
    """Run the master/subproblem loop until the relative gap is within zeta."""
    t0 = time.perf_counter()
    p = with_recourse_slack(inst.problem) if inst.slack else inst.problem
    flags: Dict[str, object] = {}
    if inst.slack:
        flags["slack_mode"] = True

    tasks = [(s, i) for s in inst.classes for i in range(len(inst.unions[s].basics))]
    need = set()
    for s, i in tasks:
        MS = p.M @ inst.unions[s].basics[i].shape
        need.update(np.unique(np.nonzero(np.abs(MS) > 1e-14)[0]).tolist())
    m0, fb = big_m_bound(p, rows=sorted(need), fallback=inst.big_m)
    if fb:
        flags["big_m_fallback_rows"] = fb

    state = initial_state(inst)
    lbs: List[float] = []
    ubs: List[float] = []
    best = None  # (x, worst_u, y)
    converged = False
    pool = ThreadPoolExecutor(inst.workers) if inst.workers > 1 else None
    try:
        for r in range(1, inst.max_iters + 1):
            state.iteration = r
            x, eta, lb = solve_master(state, inst, p)
            state.LB = max(state.LB, lb)

            def run(task, x=x):
                s, i = task
                return solve_subproblem(x, inst.unions[s].basics[i], p, m0, inst.big_m)

            results = list(pool.map(run, tasks)) if pool else [run(t) for t in tasks]
            by_class: Dict[int, SubproblemResult] = {}
            for (s, i), res in zip(tasks, results):  # (s, i) order; strict > keeps the lowest index
                for key, val in res.flags.items():
                    flags.setdefault(key, val)
                if s not in by_class or res.value > by_class[s].value:
                    by_class[s] = res
            ub = float(p.c @ x) + sum(inst.class_probs[s] * by_class[s].value for s in inst.classes)
            if ub < state.UB:
                state.UB = ub
                state.x = x.copy()
                best = {s: by_class[s] for s in inst.classes}
            lbs.append(state.LB)
            ubs.append(state.UB)
            gap = relative_gap(state.LB, state.UB)
            log.info("iteration %d: LB=%.6g UB=%.6g gap=%.3g", r, state.LB, state.UB, gap)
            if on_iteration is not None:
                on_iteration(r, state.LB, state.UB, gap)
            if gap <= inst.zeta:
                converged = True
                break
            stalled = True
            for s in inst.classes:
                u = by_class[s].worst_u
                if not any(np.allclose(u, v, rtol=0, atol=1e-9) for v in state.points[s]):
                    stalled = False
                state.points[s].append(u)
            if stalled:
                flags["stalled"] = True  # no new points: bounds cannot move further
                break
    finally:
        if pool:
            pool.shutdown()

    gap = relative_gap(state.LB, state.UB)
    if not converged:
        flags["non_converged"] = True
    names = dict(zip(inst.class_probs.class_ids, inst.class_probs.class_ids))
    return SolveReport(
        method=method,
        objective=p.user_objective(state.UB),
        x=state.x.tolist(),
        status="optimal" if converged else "non_converged",
        converged=converged,
        iterations=state.iteration,
        wall_time=time.perf_counter() - t0,
        lower_bounds=lbs,
        upper_bounds=ubs,
        worst_u={str(names[s]): best[s].worst_u.tolist() for s in inst.classes},
        second_stage={str(names[s]): best[s].y.tolist() for s in inst.classes},
        flags=flags,
        sense=p.sense,
        gap=gap,
    )


def solve_ddanro(problem: CompactProblem, union: UncertaintySetUnion, zeta: float = 1e-3, max_iters: int = 50,
                 **kw) -> SolveReport:
    """Single-class special case: all data treated as one population."""
    cid = union.class_id
    inst = DdsroInstance(problem, ClassDistribution({cid: 1.0}), {cid: union}, zeta, max_iters, **kw)
    return solve_ddsro(inst, method="ddanro")
