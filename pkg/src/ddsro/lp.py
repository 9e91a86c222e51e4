"""Dense LP / MILP engine.

Bounded-variable revised simplex (two-phase, explicit basis inverse) with
row duals, and best-bound branch-and-bound on top of it.  Everything is dense
numpy; problems are desk scale (a few thousand columns at most).
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.linalg.blas import dger

log = logging.getLogger(__name__)

FEAS_TOL = 1e-7
INT_TOL = 1e-6
MILP_GAP = 1e-6
BLAND_AFTER = 1000
DEFAULT_NODE_LIMIT = 10**6

LE, EQ, GE = "<=", "==", ">="
_RELATIONS = {LE, EQ, GE, "=", "<", ">"}
_CANON = {"=": EQ, "<": LE, ">": GE}

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class LpError(Exception):
    pass


class NodeLimitError(LpError):
    """Branch-and-bound hit its node limit; the best incumbent is attached."""

    def __init__(self, message, incumbent=None):
        super().__init__(message)
        self.incumbent = incumbent


@dataclass
class LinearProgram:
    """min/max c.x subject to rows A x (<=|==|>=) rhs and lo <= x <= hi.

    ``A`` is stored densely; use :meth:`add_row` to build incrementally.
    """

    c: np.ndarray
    A: np.ndarray = None
    relations: list = None
    rhs: np.ndarray = None
    lo: np.ndarray = None
    hi: np.ndarray = None
    integrality: np.ndarray = None
    sense: str = "min"
    names: Optional[list] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        if self.A is None:
            self.A = np.zeros((0, n))
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if self.A.size == 0:
            self.A = self.A.reshape(0, n)
        m = self.A.shape[0]
        self.relations = list(self.relations) if self.relations is not None else [GE] * m
        self.relations = [_CANON.get(r, r) for r in self.relations]
        self.rhs = np.zeros(m) if self.rhs is None else np.asarray(self.rhs, dtype=float).ravel()
        self.lo = np.zeros(n) if self.lo is None else np.asarray(self.lo, dtype=float).ravel().copy()
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).ravel().copy()
        if self.integrality is None:
            self.integrality = np.zeros(n, dtype=bool)
        self.integrality = np.asarray(self.integrality, dtype=bool).ravel()
        self.validate()

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def validate(self):
        n, m = self.n, self.m
        if self.A.shape[1] != n:
            raise LpError(f"row width {self.A.shape[1]} does not match {n} variables")
        if len(self.relations) != m or self.rhs.size != m:
            raise LpError("relations/rhs length does not match row count")
        if self.lo.size != n or self.hi.size != n or self.integrality.size != n:
            raise LpError("bounds/integrality length does not match variable count")
        bad = [r for r in self.relations if r not in _RELATIONS]
        if bad:
            raise LpError(f"unknown row relation {bad[0]!r}")
        if np.any(self.lo > self.hi):
            j = int(np.argmax(self.lo > self.hi))
            raise LpError(f"variable {j} has lo > hi")
        if self.sense not in ("min", "max"):
            raise LpError(f"sense must be 'min' or 'max', got {self.sense!r}")

    def add_row(self, coeffs, relation, rhs):
        coeffs = np.asarray(coeffs, dtype=float).ravel()
        if coeffs.size != self.n:
            raise LpError(f"row has {coeffs.size} coefficients, expected {self.n}")
        self.A = np.vstack([self.A, coeffs])
        self.relations.append(_CANON.get(relation, relation))
        self.rhs = np.append(self.rhs, float(rhs))

    def copy(self) -> "LinearProgram":
        return LinearProgram(
            self.c.copy(), self.A.copy(), list(self.relations), self.rhs.copy(),
            self.lo.copy(), self.hi.copy(), self.integrality.copy(), self.sense,
            None if self.names is None else list(self.names),
        )

    def row_activity(self, x) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float)

    def max_violation(self, x) -> float:
        """Largest absolute row or bound violation of ``x``."""
        x = np.asarray(x, dtype=float)
        act = self.A @ x
        viol = 0.0
        for r, a, b in zip(self.relations, act, self.rhs):
            if r == LE:
                viol = max(viol, a - b)
            elif r == GE:
                viol = max(viol, b - a)
            else:
                viol = max(viol, abs(a - b))
        if self.n:
            viol = max(viol, float(np.max(self.lo - x)), float(np.max(x - self.hi)))
        return max(viol, 0.0)

    def to_lp_text(self) -> str:
        """CPLEX-LP-like dump, for eyeballing only."""
        names = self.names or [f"x{j}" for j in range(self.n)]

        def expr(coefs):
            terms = [f"{'-' if v < 0 else '+'} {abs(v):.12g} {names[j]}" for j, v in enumerate(coefs) if v != 0]
            return " ".join(terms) if terms else "0"

        out = ["Minimize" if self.sense == "min" else "Maximize", f" obj: {expr(self.c)}", "Subject To"]
        for i in range(self.m):
            out.append(f" r{i}: {expr(self.A[i])} {self.relations[i]} {self.rhs[i]:.12g}")
        out.append("Bounds")
        for j in range(self.n):
            out.append(f" {self.lo[j]:.12g} <= {names[j]} <= {self.hi[j]:.12g}")
        ints = [names[j] for j in np.flatnonzero(self.integrality)]
        if ints:
            out.append("General")
            out.append(" " + " ".join(ints))
        out.append("End")
        return "\n".join(out) + "\n"


@dataclass
class LpSolution:
    status: str
    x: Optional[np.ndarray] = None
    objective: float = math.nan
    duals: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    iterations: int = 0
    nodes: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


# ---------------------------------------------------------------------------
# simplex


class _Simplex:
    """One bounded-variable revised simplex solve in min form.

    Columns are [structural | slack | artificial]; row i reads
    ``A_i x + s_i (+/- a_i) = rhs_i`` with the slack bounds encoding the
    row relation.
    """

    refactor_every = 100  # pivots between re-inversions, at least; grows with m

    def __init__(self, A, b, c, lo, hi, slack_lo, slack_hi):
        m, n = A.shape
        self.m, self.n = m, n
        self.b = b
        # scale for tolerances
        self.cscale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0

        x = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
        resid = b - A @ x
        clipped = np.clip(resid, slack_lo, slack_hi)
        gap = resid - clipped
        need_art = np.abs(gap) > 0.0
        art_rows = np.flatnonzero(need_art)
        k = art_rows.size

        self.ncol = n + m + k
        full = np.zeros((m, self.ncol))
        full[:, :n] = A
        full[np.arange(m), n + np.arange(m)] = 1.0
        for a, i in enumerate(art_rows):
            full[i, n + m + a] = 1.0 if gap[i] > 0 else -1.0
        self.full = full

        self.lo = np.concatenate([lo, slack_lo, np.zeros(k)])
        self.hi = np.concatenate([hi, slack_hi, np.full(k, np.inf)])
        self.cost2 = np.concatenate([c, np.zeros(m + k)])
        self.cost1 = np.concatenate([np.zeros(n + m), np.ones(k)])
        self.art_start = n + m

        self.x = np.concatenate([x, clipped, np.abs(gap[art_rows])])
        basis = n + np.arange(m)
        for a, i in enumerate(art_rows):
            basis[i] = n + m + a
        self.basis = basis
        self.is_basic = np.zeros(self.ncol, dtype=bool)
        self.is_basic[basis] = True
        self.iterations = 0
        self.degenerate_run = 0
        self.refactor_every = max(type(self).refactor_every, m // 4)
        self._refactor()

    # -- linear algebra --------------------------------------------------

    def _refactor(self):
        B = self.full[:, self.basis]
        diag = np.diagonal(B)
        try:
            if np.count_nonzero(B) == np.count_nonzero(diag) == self.m:
                # slack/artificial starting basis: a signed identity
                self.Binv = np.asfortranarray(np.diag(1.0 / diag))
            else:
                self.Binv = np.asfortranarray(scipy.linalg.inv(B))
        except (np.linalg.LinAlgError, ValueError) as exc:  # pragma: no cover - basis stays nonsingular by pivoting
            raise LpError("singular basis during refactorization") from exc
        nb = ~self.is_basic
        rhs = self.b - self.full[:, nb] @ self.x[nb]
        self.x[self.basis] = self.Binv @ rhs
        self.since_refactor = 0

    def _pivot(self, r, q, alpha):
        row = self.Binv[r] / alpha[r]
        self.Binv = dger(-1.0, alpha, row, a=self.Binv, overwrite_a=1)
        self.Binv[r] = row
        leaving = self.basis[r]
        self.is_basic[leaving] = False
        self.is_basic[q] = True
        self.basis[r] = q
        self.since_refactor += 1

    def _prices(self, cost):
        y = cost[self.basis] @ self.Binv
        d = cost - y @ self.full
        d[self.is_basic] = 0.0
        return y, d

    # -- main loop -------------------------------------------------------

    def run(self, cost, max_iter):
        """Iterate to optimality for ``cost``; returns 'optimal' or 'unbounded'.

        Devex pricing; Bland's rule once too many consecutive degenerate
        pivots have been made.
        """
        dtol = 1e-9 * max(1.0, float(np.max(np.abs(cost))))
        ptol = 1e-9
        fixed = self.lo == self.hi
        weights = np.ones(self.ncol)
        y, d = self._prices(cost)
        while True:
            if self.iterations >= max_iter:
                raise LpError(f"simplex iteration limit {max_iter} reached")
            if self.since_refactor >= self.refactor_every:
                self._refactor()
                y, d = self._prices(cost)

            nonbasic = ~self.is_basic & ~fixed
            can_up = nonbasic & (self.x < self.hi) & (d < -dtol)
            can_dn = nonbasic & (self.x > self.lo) & (d > dtol)
            eligible = np.flatnonzero(can_up | can_dn)
            if eligible.size == 0:
                # confirm with fresh prices before declaring optimality
                if self.since_refactor:
                    self._refactor()
                    y, d = self._prices(cost)
                    continue
                self.y, self.d = y, d
                return OPTIMAL
            bland = self.degenerate_run >= BLAND_AFTER
            if bland:
                q = int(eligible[0])
            else:
                q = int(eligible[np.argmax(d[eligible] ** 2 / weights[eligible])])
            direction = 1.0 if can_up[q] else -1.0

            alpha = self.Binv @ self.full[:, q]
            delta = direction * alpha
            xb = self.x[self.basis]
            lob, hib = self.lo[self.basis], self.hi[self.basis]
            ratios = np.full(self.m, np.inf)
            dec = delta > ptol
            inc = delta < -ptol
            with np.errstate(invalid="ignore"):
                ratios[dec] = (xb[dec] - lob[dec]) / delta[dec]
                ratios[inc] = (hib[inc] - xb[inc]) / (-delta[inc])
            ratios = np.where(np.isnan(ratios), np.inf, np.maximum(ratios, 0.0))
            t_flip = self.hi[q] - self.lo[q]
            t_min = float(np.min(ratios))

            if not np.isfinite(t_min) and not np.isfinite(t_flip):
                self.y, self.d = y, d
                return UNBOUNDED

            self.iterations += 1
            if t_flip <= t_min:
                # bound flip, basis unchanged
                self.x[self.basis] = xb - t_flip * delta
                self.x[q] = self.hi[q] if direction > 0 else self.lo[q]
                self.degenerate_run = 0
                continue

            ties = np.flatnonzero(ratios <= t_min + 1e-12)
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(alpha[ties]))])
            t = float(ratios[r])
            self.degenerate_run = self.degenerate_run + 1 if t <= 1e-12 else 0

            self.x[self.basis] = xb - t * delta
            self.x[q] = self.x[q] + direction * t
            leaving = self.basis[r]
            self.x[leaving] = self.lo[leaving] if delta[r] > 0 else self.hi[leaving]

            # pivot row of the tableau drives both the price and devex updates
            arow = self.Binv[r] @ self.full
            apiv = alpha[r]
            theta = d[q] / apiv
            d -= theta * arow
            d[q] = 0.0
            wq = weights[q]
            ratio2 = (arow / apiv) ** 2
            np.maximum(weights, ratio2 * wq, out=weights)
            weights[leaving] = max(wq / apiv**2, 1.0)
            y = None
            self._pivot(r, q, alpha)
            d[self.is_basic] = 0.0


def _slack_bounds(relations):
    lo = np.array([0.0 if r in (LE, EQ) else -np.inf for r in relations])
    hi = np.array([0.0 if r in (GE, EQ) else np.inf for r in relations])
    return lo, hi


def solve_lp(p: LinearProgram, max_iter: Optional[int] = None) -> LpSolution:
    """Solve a continuous LP.  Integrality markers are rejected."""
    p.validate()
    if p.integrality.any():
        raise LpError("solve_lp got integer variables; use solve_milp")
    return _solve_relaxation(p, p.lo, p.hi, max_iter)


def _solve_relaxation(p, lo, hi, max_iter=None) -> LpSolution:
    m, n = p.m, p.n
    sign = 1.0 if p.sense == "min" else -1.0
    c = sign * p.c
    A = p.A
    b = p.rhs.copy()
    # Rows that are all zero are checked directly; they carry no information
    # for the simplex and only produce redundant artificials.
    slo, shi = _slack_bounds(p.relations)
    max_iter = max_iter or 50 * (m + n) + 1000

    if m == 0:
        return _solve_bounds_only(p, c, sign, lo, hi)

    splx = _Simplex(A, b, c, lo.astype(float), hi.astype(float), slo, shi)
    if splx.ncol > n + m:
        status = splx.run(splx.cost1, max_iter)
        infeas = float(np.sum(splx.x[splx.art_start:]))
        scale = max(1.0, float(np.max(np.abs(b))))
        if infeas > FEAS_TOL * scale:
            return LpSolution(INFEASIBLE, iterations=splx.iterations)
        # artificials are pinned at zero for phase two
        splx.hi[splx.art_start:] = 0.0
        splx.x[splx.art_start:] = np.where(splx.is_basic[splx.art_start:], splx.x[splx.art_start:], 0.0)
    # run() re-factorizes and re-prices before accepting optimality
    status = splx.run(splx.cost2, max_iter)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, iterations=splx.iterations)

    x = splx.x[:n].copy()
    x = np.clip(x, lo, hi)
    obj = float(p.c @ x)
    duals = sign * splx.y
    rc = sign * splx.d[:n]
    return LpSolution(OPTIMAL, x, obj, duals, rc, iterations=splx.iterations)


def _solve_bounds_only(p, c, sign, lo, hi):
    x = np.empty(p.n)
    for j in range(p.n):
        if c[j] > 0:
            x[j] = lo[j]
        elif c[j] < 0:
            x[j] = hi[j]
        else:
            x[j] = lo[j] if np.isfinite(lo[j]) else (hi[j] if np.isfinite(hi[j]) else 0.0)
        if not np.isfinite(x[j]):
            return LpSolution(UNBOUNDED)
    return LpSolution(OPTIMAL, x, float(p.c @ x), np.zeros(0), p.c.copy(), iterations=0)


# ---------------------------------------------------------------------------
# branch and bound


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    lo: np.ndarray = field(compare=False)
    hi: np.ndarray = field(compare=False)
    depth: int = field(compare=False, default=0)


def _most_fractional(x, int_idx):
    vals = x[int_idx]
    frac = np.abs(vals - np.round(vals))
    frac = np.minimum(frac, 1.0 - frac)
    if frac.size == 0 or float(np.max(frac)) <= INT_TOL:
        return None
    # argmax returns the lowest index on ties
    return int(int_idx[int(np.argmax(frac))])


def solve_milp(p: LinearProgram, node_limit: int = DEFAULT_NODE_LIMIT, gap: float = MILP_GAP) -> LpSolution:
    """Best-bound branch-and-bound on the most fractional variable."""
    p.validate()
    if not p.integrality.any():
        return solve_lp(p)

    sign = 1.0 if p.sense == "min" else -1.0
    int_idx = np.flatnonzero(p.integrality)
    lo0 = p.lo.copy()
    hi0 = p.hi.copy()
    lo0[int_idx] = np.ceil(lo0[int_idx] - INT_TOL)
    hi0[int_idx] = np.floor(hi0[int_idx] + INT_TOL)
    if np.any(lo0 > hi0):
        return LpSolution(INFEASIBLE)

    heap = [_Node(-np.inf, 0, lo0, hi0)]
    seq = 1
    best_val = np.inf  # in min form
    best_x = None
    nodes = 0
    iters = 0

    while heap:
        node = heapq.heappop(heap)
        if node.bound >= best_val - gap:
            continue
        if nodes >= node_limit:
            inc = None if best_x is None else LpSolution(OPTIMAL, best_x, float(p.c @ best_x))
            raise NodeLimitError(f"node limit {node_limit} reached", incumbent=inc)
        nodes += 1
        sol = _solve_relaxation(p, node.lo, node.hi)
        iters += sol.iterations
        if sol.status == INFEASIBLE:
            continue
        if sol.status == UNBOUNDED:
            if best_x is None and nodes == 1:
                return LpSolution(UNBOUNDED, nodes=nodes, iterations=iters)
            # an unbounded subtree of a bounded-feasible MILP means MILP unbounded
            return LpSolution(UNBOUNDED, nodes=nodes, iterations=iters)
        val = sign * sol.objective
        if val >= best_val - gap:
            continue
        j = _most_fractional(sol.x, int_idx)
        if j is None:
            best_val, best_x = val, sol.x.copy()
            continue
        v = sol.x[j]
        down_hi = node.hi.copy()
        down_hi[j] = math.floor(v)
        up_lo = node.lo.copy()
        up_lo[j] = math.ceil(v)
        heapq.heappush(heap, _Node(val, seq, node.lo, down_hi, node.depth + 1))
        heapq.heappush(heap, _Node(val, seq + 1, up_lo, node.hi, node.depth + 1))
        seq += 2

    if best_x is None:
        return LpSolution(INFEASIBLE, nodes=nodes, iterations=iters)

    # polish: pin integers at their rounded values and re-solve the continuous part
    fixed = np.round(best_x[int_idx])
    lo, hi = p.lo.copy(), p.hi.copy()
    lo[int_idx] = fixed
    hi[int_idx] = fixed
    pol = _solve_relaxation(p, lo, hi)
    iters += pol.iterations
    if pol.status == OPTIMAL:
        x = pol.x
        x[int_idx] = fixed
    else:  # pragma: no cover - the incumbent itself is feasible
        x = best_x
        x[int_idx] = fixed
    return LpSolution(OPTIMAL, x, float(p.c @ x), nodes=nodes, iterations=iters)


def solve(p: LinearProgram, **kw) -> LpSolution:
    """Dispatch on integrality."""
    if p.integrality.any():
        return solve_milp(p, **kw)
    return solve_lp(p)


def strong_duality_residual(p: LinearProgram, sol: LpSolution) -> float:
    """|c.x - (duals.rhs + reduced_costs.x)| for an optimal LP solution."""
    return abs(float(p.c @ sol.x) - float(sol.duals @ p.rhs) - float(sol.reduced_costs @ sol.x))


def build_lp(c, rows: Sequence = (), sense="min", bounds=None, integrality=None) -> LinearProgram:
    """Convenience constructor from ``(coeffs, relation, rhs)`` triples."""
    c = np.asarray(c, dtype=float)
    n = c.size
    A = np.array([r[0] for r in rows], dtype=float).reshape(len(rows), n)
    rel = [r[1] for r in rows]
    rhs = np.array([r[2] for r in rows], dtype=float)
    lo = hi = None
    if bounds is not None:
        lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds], dtype=float)
        hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds], dtype=float)
    return LinearProgram(c, A, rel, rhs, lo, hi, integrality, sense)
