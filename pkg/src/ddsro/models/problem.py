"""Canonical two-stage problem

    min  c.x + E[ Q(x, u) ]      s.t.  A x >= d,  0 <= x <= x_ub,  x_j integer for marked j
    Q(x, u) = min b.y            s.t.  W y >= h - T x - M u,  y >= 0

User problems that maximize are stored negated; ``sense`` remembers that so
reports can flip the sign back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..lp import LinearProgram, LpSolution, solve_lp


class ProblemError(ValueError):
    pass


@dataclass
class CompactProblem:
    c: np.ndarray
    b: np.ndarray
    A: np.ndarray
    d: np.ndarray
    W: np.ndarray
    h: np.ndarray
    T: np.ndarray
    M: np.ndarray
    x_integer: Optional[np.ndarray] = None
    x_ub: Optional[np.ndarray] = None
    sense: str = "min"
    name: str = "problem"
    x_names: Optional[List[str]] = None
    y_names: Optional[List[str]] = None
    row_names: Optional[List[str]] = None
    big_m: Optional[float] = None  # problem-specific fallback for the Glover constants

    def __post_init__(self):
        f = lambda v: np.asarray(v, dtype=float)
        self.c, self.b, self.d, self.h = f(self.c).ravel(), f(self.b).ravel(), f(self.d).ravel(), f(self.h).ravel()
        n1, n3, m2 = self.c.size, self.b.size, self.h.size
        self.A = f(self.A).reshape(-1, n1) if np.size(self.A) else np.zeros((0, n1))
        self.W = f(self.W).reshape(m2, n3)
        self.T = f(self.T).reshape(m2, n1)
        self.M = f(self.M).reshape(m2, -1)
        self.x_integer = np.zeros(n1, bool) if self.x_integer is None else np.asarray(self.x_integer, bool).ravel()
        self.x_ub = np.full(n1, np.inf) if self.x_ub is None else f(self.x_ub).ravel()
        self.validate()

    @property
    def n_x(self) -> int:
        return self.c.size

    @property
    def n_y(self) -> int:
        return self.b.size

    @property
    def n_rows(self) -> int:
        return self.h.size

    @property
    def dim_u(self) -> int:
        return self.M.shape[1]

    def validate(self):
        n1, n3, m2 = self.n_x, self.n_y, self.n_rows
        if self.A.shape[1] != n1 or self.d.size != self.A.shape[0]:
            raise ProblemError("A/d dimensions inconsistent with c")
        if self.W.shape != (m2, n3) or self.T.shape != (m2, n1) or self.M.shape[0] != m2:
            raise ProblemError("recourse matrices inconsistent")
        if self.x_integer.size != n1 or self.x_ub.size != n1:
            raise ProblemError("first-stage markers inconsistent with c")
        if self.sense not in ("min", "max"):
            raise ProblemError("sense must be 'min' or 'max'")

    def user_objective(self, canonical_value: float) -> float:
        return -canonical_value if self.sense == "max" else canonical_value

    # -- building blocks --------------------------------------------------

    def first_stage_rows(self):
        """``(kept row indices, relations)`` for A x >= d with negated row
        pairs merged into equalities."""
        return merge_negated_pairs(np.hstack([self.A, self.d[:, None]]))

    def recourse_rows(self):
        """Same for the recourse rows [W | T | M | h]."""
        return merge_negated_pairs(np.hstack([self.W, self.T, self.M, self.h[:, None]]))

    def recourse_rhs(self, x, u) -> np.ndarray:
        return self.h - self.T @ np.asarray(x, float) - self.M @ np.asarray(u, float)

    def recourse_lp(self, x, u) -> LinearProgram:
        return LinearProgram(self.b.copy(), self.W.copy(), [">="] * self.n_rows, self.recourse_rhs(x, u))

    def recourse(self, x, u) -> LpSolution:
        """Solve the inner LP Q(x, u)."""
        return solve_lp(self.recourse_lp(x, u))

    def first_stage_feasible(self, x, tol: float = 1e-7) -> bool:
        x = np.asarray(x, float)
        return bool(np.all(self.A @ x >= self.d - tol) and np.all(x >= -tol) and np.all(x <= self.x_ub + tol))

    def fixed_u_program(self, u) -> LinearProgram:
        """min c.x + b.y with u fixed: the deterministic MILP."""
        n1, n3 = self.n_x, self.n_y
        ka, rela = self.first_stage_rows()
        kr, relr = self.recourse_rows()
        m1, m2 = ka.size, kr.size
        A = np.zeros((m1 + m2, n1 + n3))
        A[:m1, :n1] = self.A[ka]
        A[m1:, :n1] = self.T[kr]
        A[m1:, n1:] = self.W[kr]
        rhs = np.concatenate([self.d[ka], (self.h - self.M @ np.asarray(u, float))[kr]])
        lo = np.zeros(n1 + n3)
        hi = np.concatenate([self.x_ub, np.full(n3, np.inf)])
        integ = np.concatenate([self.x_integer, np.zeros(n3, bool)])
        return LinearProgram(np.concatenate([self.c, self.b]), A, rela + relr, rhs, lo, hi, integ)

    # -- serialization ----------------------------------------------------

    def to_dict(self):
        arr = lambda a: np.asarray(a).tolist()
        return {
            "name": self.name, "sense": self.sense,
            "c": arr(self.c), "b": arr(self.b), "A": arr(self.A), "d": arr(self.d),
            "W": arr(self.W), "h": arr(self.h), "T": arr(self.T), "M": arr(self.M),
            "x_integer": arr(self.x_integer), "x_ub": [None if not np.isfinite(v) else float(v) for v in self.x_ub],
            "x_names": self.x_names, "y_names": self.y_names, "row_names": self.row_names,
            "big_m": self.big_m,
        }

    @classmethod
    def from_dict(cls, d):
        x_ub = d.get("x_ub")
        if x_ub is not None:
            x_ub = [np.inf if v is None else v for v in x_ub]
        n1 = len(d["c"])
        A = np.asarray(d["A"], float).reshape(-1, n1)
        return cls(d["c"], d["b"], A, d["d"], d["W"], d["h"], d["T"], d["M"], d.get("x_integer"), x_ub,
                   d.get("sense", "min"), d.get("name", "problem"), d.get("x_names"), d.get("y_names"),
                   d.get("row_names"), d.get("big_m"))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def merge_negated_pairs(K: np.ndarray):
    """Rows of ``K`` (coefficients | rhs, all read as ">=") that are exact
    negatives of an earlier row describe an equality together with it.

    Returns ``(kept, relations)``: indices of rows to keep and "==" for rows
    that absorbed a partner, ">=" otherwise.
    """
    first = {}
    kept, rel = [], []
    pos = {}
    for i, row in enumerate(K):
        key = (row + 0.0).tobytes()
        neg = (-row + 0.0).tobytes()
        if neg in first and first[neg] is not None and np.any(row != 0.0):
            k = first[neg]
            rel[pos[k]] = "=="
            first[neg] = None  # each row absorbs at most one partner
            continue
        if key not in first:
            first[key] = i
        pos[i] = len(kept)
        kept.append(i)
        rel.append(">=")
    return np.array(kept, dtype=int), rel
