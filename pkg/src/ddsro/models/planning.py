"""Multi-period process-network planning under demand and supply uncertainty.

First stage (per process i and period t): capacity expansion QE, installed
capacity Q and the binary expansion decision Y.  Second stage (per period):
purchases P of purchasable chemicals, sales SA of sellable chemicals and
operating levels W of processes.  The user problem maximizes net present
value; it is stored negated in canonical min form.

Uncertain supplies/demands enter through a linear map from the uncertainty
vector u = (demand coordinates, supply coordinates):
``su_jt = scale_jt * u_k`` for the coordinate k assigned to chemical j.
Chemicals may instead declare a fixed per-period limit, or none.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ..dataio import ClassDistribution, LabeledDataset
from ..dpmm import MixturePosterior
from ..sets import UncertaintySetUnion, build_union, product_union
from .problem import CompactProblem, ProblemError

DATA_DIR = Path(__file__).with_name("data")
SYNTHETIC_INSTANCE = DATA_DIR / "planning_synthetic.json"


@dataclass
class Limit:
    """Per-period limit on purchases (supply) or sales (demand) of one chemical."""

    coordinate: Optional[int] = None  # index into the demand or supply block of u
    scale: Optional[List[float]] = None  # per-period multiplier of u[coordinate]
    fixed: Optional[List[float]] = None  # deterministic per-period limit

    def to_dict(self):
        return {k: v for k, v in (("coordinate", self.coordinate), ("scale", self.scale), ("fixed", self.fixed))
                if v is not None}


@dataclass
class PlanningInstance:
    processes: List[str]
    chemicals: List[str]
    periods: int
    c1: np.ndarray  # (I, T) variable investment cost per unit of expansion
    c2: np.ndarray  # (I, T) fixed investment cost per expansion
    c3: np.ndarray  # (I, T) operating cost per unit of operating level
    c4: np.ndarray  # (J, T) purchase cost
    v: np.ndarray  # (J, T) sale price
    qe_lo: np.ndarray  # (I, T)
    qe_hi: np.ndarray  # (I, T)
    ce: np.ndarray  # (I,) max number of expansions
    cb: np.ndarray  # (T,) investment budget per period
    kappa: np.ndarray  # (I, J) >0 consumed, <0 produced per unit operating level
    q0: np.ndarray  # (I,) initial capacity
    purchasable: List[str]
    sellable: List[str]
    supply: Dict[str, Limit] = field(default_factory=dict)
    demand: Dict[str, Limit] = field(default_factory=dict)
    demand_dim: int = 0
    supply_dim: int = 0
    name: str = "planning"
    description: str = ""

    def __post_init__(self):
        I, J, T = len(self.processes), len(self.chemicals), int(self.periods)
        f = lambda a, shape: np.asarray(a, float).reshape(shape)
        self.c1, self.c2, self.c3 = f(self.c1, (I, T)), f(self.c2, (I, T)), f(self.c3, (I, T))
        self.c4, self.v = f(self.c4, (J, T)), f(self.v, (J, T))
        self.qe_lo, self.qe_hi = f(self.qe_lo, (I, T)), f(self.qe_hi, (I, T))
        self.ce, self.cb = f(self.ce, (I,)), f(self.cb, (T,))
        self.kappa, self.q0 = f(self.kappa, (I, J)), f(self.q0, (I,))
        self.supply = {j: lim if isinstance(lim, Limit) else Limit(**lim) for j, lim in self.supply.items()}
        self.demand = {j: lim if isinstance(lim, Limit) else Limit(**lim) for j, lim in self.demand.items()}
        self.validate()

    @property
    def dim_u(self) -> int:
        return self.demand_dim + self.supply_dim

    def validate(self):
        T = self.periods
        if T < 1 or not self.processes or not self.chemicals:
            raise ProblemError("instance needs at least one process, chemical and period")
        if np.any(self.qe_lo > self.qe_hi):
            raise ProblemError("qe_lo exceeds qe_hi")
        if np.any(self.ce < 0):
            raise ProblemError("ce must be non-negative")
        if not np.all(np.isfinite(self.kappa)):
            raise ProblemError("kappa must be finite")
        for group in (self.purchasable, self.sellable, self.supply, self.demand):
            unknown = set(group) - set(self.chemicals)
            if unknown:
                raise ProblemError(f"unknown chemicals {sorted(unknown)}")
        if set(self.supply) - set(self.purchasable) or set(self.demand) - set(self.sellable):
            raise ProblemError("supply limits need purchasable chemicals, demand limits sellable ones")
        for kind, limits, dim in (("supply", self.supply, self.supply_dim), ("demand", self.demand, self.demand_dim)):
            used = []
            for j, lim in limits.items():
                if (lim.coordinate is None) == (lim.fixed is None):
                    raise ProblemError(f"{kind} of {j}: give exactly one of coordinate or fixed")
                if lim.coordinate is not None:
                    if not 0 <= lim.coordinate < dim:
                        raise ProblemError(f"{kind} of {j}: coordinate {lim.coordinate} outside [0, {dim})")
                    if lim.scale is not None and len(lim.scale) != T:
                        raise ProblemError(f"{kind} of {j}: scale needs {T} entries")
                    used.append(lim.coordinate)
                elif len(lim.fixed) != T:
                    raise ProblemError(f"{kind} of {j}: fixed needs {T} entries")
            if sorted(used) != list(range(dim)):
                raise ProblemError(f"every {kind} coordinate must map to exactly one chemical")

    # -- JSON ---------------------------------------------------------------

    def to_dict(self):
        lst = lambda a: np.asarray(a).tolist()
        return {
            "name": self.name, "description": self.description,
            "processes": self.processes, "chemicals": self.chemicals, "periods": self.periods,
            "c1": lst(self.c1), "c2": lst(self.c2), "c3": lst(self.c3), "c4": lst(self.c4), "v": lst(self.v),
            "qe_lo": lst(self.qe_lo), "qe_hi": lst(self.qe_hi), "ce": lst(self.ce), "cb": lst(self.cb),
            "kappa": lst(self.kappa), "q0": lst(self.q0),
            "purchasable": self.purchasable, "sellable": self.sellable,
            "supply": {j: l.to_dict() for j, l in self.supply.items()},
            "demand": {j: l.to_dict() for j, l in self.demand.items()},
            "demand_dim": self.demand_dim, "supply_dim": self.supply_dim,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path=SYNTHETIC_INSTANCE) -> "PlanningInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class PlanningLayout:
    """Index maps from (process|chemical, period) to x / y columns."""

    QE: np.ndarray  # (I, T)
    Q: np.ndarray
    Y: np.ndarray
    P: Dict[str, np.ndarray]  # chemical -> (T,) y indices
    SA: Dict[str, np.ndarray]
    W: np.ndarray  # (I, T) y indices


def planning_layout(pi: PlanningInstance) -> PlanningLayout:
    I, T = len(pi.processes), pi.periods
    QE = np.arange(I * T).reshape(I, T)
    P, k = {}, 0
    for j in pi.purchasable:
        P[j] = np.arange(k, k + T)
        k += T
    SA = {}
    for j in pi.sellable:
        SA[j] = np.arange(k, k + T)
        k += T
    W = k + np.arange(I * T).reshape(I, T)
    return PlanningLayout(QE, QE + I * T, QE + 2 * I * T, P, SA, W)


def build_planning_problem(pi: PlanningInstance) -> CompactProblem:
    I, J, T = len(pi.processes), len(pi.chemicals), pi.periods
    lay = planning_layout(pi)
    n1 = 3 * I * T
    n3 = int(lay.W.max()) + 1
    jidx = {j: k for k, j in enumerate(pi.chemicals)}

    c = np.zeros(n1)
    c[lay.QE.ravel()] = pi.c1.ravel()
    c[lay.Y.ravel()] = pi.c2.ravel()
    b = np.zeros(n3)
    for j, cols in lay.P.items():
        b[cols] = pi.c4[jidx[j]]
    for j, cols in lay.SA.items():
        b[cols] = -pi.v[jidx[j]]
    b[lay.W.ravel()] = pi.c3.ravel()

    # first stage, all as ">=" rows
    A, d, names = [], [], []

    def arow(entries, rhs, name):
        r = np.zeros(n1)
        for col, coef in entries:
            r[col] += coef
        A.append(r)
        d.append(rhs)
        names.append(name)

    for i in range(I):
        for t in range(T):
            qe, q, y = lay.QE[i, t], lay.Q[i, t], lay.Y[i, t]
            arow([(qe, 1.0), (y, -pi.qe_lo[i, t])], 0.0, f"expand_lo[{i},{t}]")
            arow([(qe, -1.0), (y, pi.qe_hi[i, t])], 0.0, f"expand_hi[{i},{t}]")
            prev = [(lay.Q[i, t - 1], -1.0)] if t > 0 else []
            base = pi.q0[i] if t == 0 else 0.0
            # Q_it - Q_i,t-1 - QE_it = q0 (t = 0) / 0, as two inequalities
            arow([(q, 1.0), (qe, -1.0)] + prev, base, f"capacity_ge[{i},{t}]")
            arow([(q, -1.0), (qe, 1.0)] + [(col, -v) for col, v in prev], -base, f"capacity_le[{i},{t}]")
        arow([(lay.Y[i, t], -1.0) for t in range(T)], -pi.ce[i], f"max_expansions[{i}]")
    for t in range(T):
        arow([(lay.QE[i, t], -pi.c1[i, t]) for i in range(I)] + [(lay.Y[i, t], -pi.c2[i, t]) for i in range(I)],
             -pi.cb[t], f"budget[{t}]")

    # recourse rows  W y >= h - T x - M u
    Wr, Tr, Mr, h, rnames = [], [], [], [], []
    du = pi.dim_u

    def rrow(ycoef, xcoef, ucoef, rhs, name):
        w, tt, m = np.zeros(n3), np.zeros(n1), np.zeros(du)
        for col, v in ycoef:
            w[col] += v
        for col, v in xcoef:
            tt[col] += v
        for col, v in ucoef:
            m[col] += v
        Wr.append(w)
        Tr.append(tt)
        Mr.append(m)
        h.append(rhs)
        rnames.append(name)

    for i in range(I):  # W_it <= Q_it  ->  -W_it >= -Q_it
        for t in range(T):
            rrow([(lay.W[i, t], -1.0)], [(lay.Q[i, t], 1.0)], [], 0.0, f"operate[{i},{t}]")
    for j, name in enumerate(pi.chemicals):  # P - sum_i kappa W - SA = 0
        for t in range(T):
            ent = [(lay.W[i, t], -pi.kappa[i, j]) for i in range(I) if pi.kappa[i, j] != 0.0]
            if name in lay.P:
                ent.append((lay.P[name][t], 1.0))
            if name in lay.SA:
                ent.append((lay.SA[name][t], -1.0))
            rrow(ent, [], [], 0.0, f"balance_ge[{name},{t}]")
            rrow([(col, -v) for col, v in ent], [], [], 0.0, f"balance_le[{name},{t}]")
    for kind, limits, cols, offset in (("supply", pi.supply, lay.P, pi.demand_dim),
                                       ("demand", pi.demand, lay.SA, 0)):
        for j, lim in limits.items():
            for t in range(T):
                if lim.fixed is not None:  # -P >= -fixed
                    rrow([(cols[j][t], -1.0)], [], [], -float(lim.fixed[t]), f"{kind}[{j},{t}]")
                else:  # -P >= -scale * u_k   <=>  h = 0, M = +scale
                    s = 1.0 if lim.scale is None else float(lim.scale[t])
                    rrow([(cols[j][t], -1.0)], [], [(offset + lim.coordinate, s)], 0.0, f"{kind}[{j},{t}]")

    x_names = ([f"QE[{p},{t}]" for p in pi.processes for t in range(T)]
               + [f"Q[{p},{t}]" for p in pi.processes for t in range(T)]
               + [f"Y[{p},{t}]" for p in pi.processes for t in range(T)])
    y_names = [""] * n3
    for j, cols in lay.P.items():
        for t, col in enumerate(cols):
            y_names[col] = f"P[{j},{t}]"
    for j, cols in lay.SA.items():
        for t, col in enumerate(cols):
            y_names[col] = f"SA[{j},{t}]"
    for i, p in enumerate(pi.processes):
        for t in range(T):
            y_names[lay.W[i, t]] = f"W[{p},{t}]"
    x_int = np.zeros(n1, bool)
    x_int[lay.Y.ravel()] = True
    x_ub = np.full(n1, np.inf)
    x_ub[lay.Y.ravel()] = 1.0
    x_ub[lay.QE.ravel()] = pi.qe_hi.ravel()
    M = np.array(Mr).reshape(len(Mr), du)
    return CompactProblem(c, b, np.array(A), d, np.array(Wr), h, np.array(Tr), M, x_int, x_ub, "max", pi.name,
                          x_names, y_names, rnames)


# ---------------------------------------------------------------------------
# structural checks on reported solutions


def mass_balance_residual(pi: PlanningInstance, y) -> float:
    """max |P - sum_i kappa W - SA| over chemicals and periods."""
    lay = planning_layout(pi)
    y = np.asarray(y, float)
    worst = 0.0
    for j, name in enumerate(pi.chemicals):
        for t in range(pi.periods):
            v = -sum(pi.kappa[i, j] * y[lay.W[i, t]] for i in range(len(pi.processes)))
            if name in lay.P:
                v += y[lay.P[name][t]]
            if name in lay.SA:
                v -= y[lay.SA[name][t]]
            worst = max(worst, abs(v))
    return worst


def budget_violation(pi: PlanningInstance, x) -> float:
    """max over periods of sum_i (c1 QE + c2 Y) - cb, clipped at 0."""
    lay = planning_layout(pi)
    x = np.asarray(x, float)
    spend = (pi.c1 * x[lay.QE] + pi.c2 * x[lay.Y]).sum(axis=0)
    return float(max(0.0, np.max(spend - pi.cb)))


def expansion_without_decision(pi: PlanningInstance, x, tol: float = 1e-7) -> float:
    """Largest QE where Y rounds to 0 (should be 0)."""
    lay = planning_layout(pi)
    x = np.asarray(x, float)
    off = np.round(x[lay.Y]) == 0
    return float(np.max(np.abs(x[lay.QE][off]), initial=0.0))


# ---------------------------------------------------------------------------
# uncertainty sets and synthetic data


def build_demand_supply_unions(pi: PlanningInstance, demand_post: Dict[int, MixturePosterior],
                               supply_post: Dict[int, MixturePosterior], gamma_star: float, phi_dem: int,
                               phi_sup: int, scaling: str = "identity", demand_points=None,
                               supply_points=None) -> Dict[int, UncertaintySetUnion]:
    """Per-class joint sets over u = (demand, supply): every pairing of a
    demand basic set with a supply basic set, budgets applied per block."""
    if set(demand_post) != set(supply_post):
        raise ProblemError("demand and supply data have different class sets")
    out = {}
    for s in demand_post:
        if demand_post[s].dim != pi.demand_dim or supply_post[s].dim != pi.supply_dim:
            raise ProblemError(f"class {s}: posterior dimensions do not match the instance")
        dp = None if demand_points is None else demand_points[s]
        sp = None if supply_points is None else supply_points[s]
        dem = build_union(demand_post[s], gamma_star, phi_dem, scaling, dp)
        sup = build_union(supply_post[s], gamma_star, phi_sup, scaling, sp)
        out[s] = product_union(s, dem, sup)
    return out


def pooled_class_probabilities(demand: LabeledDataset, supply: LabeledDataset) -> ClassDistribution:
    """Class probabilities from the label counts of both datasets together."""
    if set(demand.class_names) != set(supply.class_names):
        raise ProblemError("demand and supply data have different class sets")
    total = len(demand) + len(supply)
    probs = {}
    for cid, name in zip(demand.class_ids, demand.class_names):
        sid = supply.class_ids[supply.class_names.index(name)]
        probs[cid] = (int(np.sum(demand.labels == cid)) + int(np.sum(supply.labels == sid))) / total
    return ClassDistribution(probs)


# Synthetic generator constants: two policy regimes, one correlated Gaussian
# per regime and block (synthetic data).
DEMAND_CLASS_MEANS = ((30.0, 38.0), (22.0, 28.0))
SUPPLY_CLASS_MEANS = ((45.0, 30.0, 14.0), (36.0, 24.0, 10.0))
DEMAND_STD = (2.5, 3.0)
SUPPLY_STD = (3.0, 2.5, 1.5)
CLASS_CORR = 0.6
CLASS_LABELS = ("encourage", "discourage")


def _corr_gauss(rng, mean, std, n):
    d = len(mean)
    C = np.full((d, d), CLASS_CORR)
    np.fill_diagonal(C, 1.0)
    S = np.outer(std, std) * C
    return np.asarray(mean) + rng.standard_normal((n, d)) @ np.linalg.cholesky(S).T


def gen_planning_data(seed: int = 0, n_demand: int = 160, n_supply: int = 200):
    """(demand dataset, supply dataset), each split evenly between two regimes."""
    rng = np.random.default_rng(seed)
    out = []
    for n, means, std in ((n_demand, DEMAND_CLASS_MEANS, DEMAND_STD), (n_supply, SUPPLY_CLASS_MEANS, SUPPLY_STD)):
        half = n // 2
        pts = np.vstack([_corr_gauss(rng, means[0], std, half), _corr_gauss(rng, means[1], std, n - half)])
        labels = [CLASS_LABELS[0]] * half + [CLASS_LABELS[1]] * (n - half)
        out.append(LabeledDataset.from_labels(pts, labels))
    return tuple(out)


def synthetic_instance(periods: int = 10) -> PlanningInstance:
    """The shipped synthetic 5-chemical / 3-process instance (see the JSON file)."""
    I, J, T = 3, 5, periods
    disc = 0.92 ** np.arange(T)  # NPV discounting folded into the coefficients
    growth = 1.0 + 0.05 * np.arange(T)
    ones = lambda rows: np.ones((rows, T))
    kappa = np.array([
        # A     B     C     D     E
        [1.10, 0.00, 0.00, -1.0, 0.00],  # P1: A -> D
        [0.00, 0.40, 0.80, 0.00, -1.0],  # P2: B + C -> E
        [0.00, 1.20, -1.0, 0.00, 0.00],  # P3: B -> C
    ])
    return PlanningInstance(
        processes=["P1", "P2", "P3"], chemicals=["A", "B", "C", "D", "E"], periods=T,
        c1=(np.array([[3.0], [3.5], [2.5]]) * disc), c2=(np.array([[40.0], [50.0], [30.0]]) * disc),
        c3=(np.array([[0.6], [0.8], [0.5]]) * disc),
        c4=np.vstack([1.0 * disc, 1.2 * disc, 2.5 * disc, 0 * disc, 0 * disc]),
        v=np.vstack([0 * disc, 0 * disc, 0 * disc, 4.0 * disc, 5.5 * disc]),
        qe_lo=10.0 * ones(I), qe_hi=60.0 * ones(I), ce=[3, 3, 3], cb=250.0 * np.ones(T),
        kappa=kappa, q0=[0.0, 0.0, 0.0],
        purchasable=["A", "B", "C"], sellable=["D", "E"],
        supply={"A": Limit(0, growth.tolist()), "B": Limit(1, growth.tolist()), "C": Limit(2, growth.tolist())},
        demand={"D": Limit(0, growth.tolist()), "E": Limit(1, growth.tolist())},
        demand_dim=2, supply_dim=3, name="planning_synthetic",
        description="Synthetic 5-chemical / 3-process / 10-period network (synthetic, not case-study data). "
                    "P1: A->D, P2: B+C->E, P3: B->C; u = (demand D, demand E, supply A, supply B, supply C) "
                    "shared across periods with 5%/period growth; costs discounted 8%/period.",
    )
