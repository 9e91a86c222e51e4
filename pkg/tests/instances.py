"""Random small instances shared by the robust-solver tests and the acceptance run.

Every recourse matrix starts with an identity block and has positive costs,
so the recourse is complete and the dual polytope bounded.
"""

import numpy as np

from ddsro.dataio import ClassDistribution
from ddsro.models.problem import CompactProblem
from ddsro.sets import BasicUncertaintySet, UncertaintySetUnion


def random_problem(rng, n_x=2, m2=None, dim_u=None, integer=False):
    m2 = int(rng.integers(2, 4)) if m2 is None else m2
    dim_u = int(rng.integers(2, 5)) if dim_u is None else dim_u
    extra = int(rng.integers(0, 7 - m2))  # recourse dimension <= 6
    W = np.hstack([np.eye(m2), rng.uniform(0.0, 1.0, (m2, extra)).round(2)])
    b = np.concatenate([rng.uniform(2.0, 6.0, m2), rng.uniform(1.0, 8.0, extra)]).round(2)
    T = rng.uniform(0.0, 1.0, (m2, n_x)).round(2)
    M = rng.normal(0.0, 1.0, (m2, dim_u)).round(2)
    h = rng.uniform(1.0, 5.0, m2).round(2)
    c = rng.uniform(0.5, 2.0, n_x).round(2)
    A = np.ones((1, n_x))
    d = np.array([0.5])
    x_ub = np.full(n_x, 3.0 if integer else 10.0)
    return CompactProblem(c, b, A, d, W, h, T, M, np.full(n_x, integer), x_ub)


def random_basic_set(rng, dim, budget=None, mu_scale=1.0):
    budget = int(rng.integers(1, min(2, dim) + 1)) if budget is None else budget
    L = np.tril(rng.normal(0.0, 0.4, (dim, dim)), -1) + np.diag(rng.uniform(0.3, 1.2, dim))
    return BasicUncertaintySet(rng.normal(0.0, mu_scale, dim).round(2), 1.0, L.round(3), budget)


def random_union(rng, dim, class_id=0, n_basics=None):
    k = int(rng.integers(1, 3)) if n_basics is None else n_basics
    return UncertaintySetUnion(class_id, [random_basic_set(rng, dim) for _ in range(k)])


def random_subproblem_case(rng):
    """(problem, x, basic set) with dim(u) <= 4, budget in {1, 2}, recourse dims <= 6."""
    p = random_problem(rng)
    x = rng.uniform(0.0, 3.0, p.n_x).round(2)
    return p, x, random_basic_set(rng, p.dim_u)


def random_classes(rng, dim, n_classes):
    w = rng.uniform(0.2, 1.0, n_classes)
    w = w / w.sum()
    probs = ClassDistribution({s: float(w[s]) for s in range(n_classes)})
    return probs, {s: random_union(rng, dim, s) for s in range(n_classes)}


def random_lp(rng):
    n = int(rng.integers(2, 7))
    m = int(rng.integers(1, 7))
    A = rng.normal(size=(m, n)).round(2)
    x0 = rng.uniform(0.5, 3.0, size=n)
    rel, rhs = [], []
    for i in range(m):
        r = rng.choice(["<=", ">=", "=="], p=[0.45, 0.45, 0.1])
        act = float(A[i] @ x0)
        slack = float(rng.uniform(0.0, 2.0))
        rel.append(r)
        rhs.append(act + slack if r == "<=" else act - slack if r == ">=" else act)
    # cap the sum so the region is bounded
    A = np.vstack([A, np.ones(n)])
    rel.append("<=")
    rhs.append(float(x0.sum()) + 5.0)
    c = rng.normal(size=n).round(2)
    sense = "min" if rng.random() < 0.5 else "max"
    return c, A, rel, np.array(rhs), sense


def random_milp(rng):
    nb = int(rng.integers(2, 13))
    nc = int(rng.integers(0, 3))
    n = nb + nc
    m = int(rng.integers(1, 5))
    A = rng.uniform(-1, 3, size=(m, n)).round(2)
    rhs = (A[:, :nb].clip(min=0).sum(axis=1) * rng.uniform(0.3, 0.7, size=m)).round(2) + 1.0
    rel = ["<="] * m
    A = np.vstack([A, np.concatenate([np.zeros(nb), np.ones(nc)])]) if nc else A
    if nc:
        rel.append("<=")
        rhs = np.append(rhs, 4.0)
    c = rng.normal(size=n).round(2)
    sense = "max" if rng.random() < 0.5 else "min"
    bounds = [(0, 1)] * nb + [(0, None)] * nc
    integ = [True] * nb + [False] * nc
    return c, A, rel, rhs, sense, bounds, integ, list(range(nb))
