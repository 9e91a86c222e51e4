"""Budgeted polytopic uncertainty sets built from mixture posteriors.

A basic set is ``{mu + S z : |z|_inf <= 1, |z|_1 <= budget}``; a class's set
is a union of basic sets, one per retained mixture component.  Joint sets
over several independent blocks (e.g. demand and supply) carry one budget per
block of ``z``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dpmm import DpmmError, MixturePosterior, effective_components, responsibilities, sqrtm_psd

MAX_ENUM_DIM = 12


class SetError(ValueError):
    pass


def compute_kappa(lam: float, omega: float, dim: int) -> float:
    """Predictive-t scale factor sqrt((lam+1) / (lam (omega+1-dim)))."""
    if lam <= 0:
        raise SetError("lambda must be positive")
    dof = omega + 1 - dim
    if dof <= 0:
        raise SetError("degrees of freedom too small for dimension")
    return math.sqrt((lam + 1.0) / (lam * dof))


@dataclass
class BasicUncertaintySet:
    mu: np.ndarray
    kappa: float
    shape: np.ndarray  # S = kappa * sqrt(Psi) * Lambda, pre-multiplied
    budget: int
    gamma: float = 1.0
    # optional per-block budgets: tuple of (index tuple, budget)
    blocks: Optional[Tuple[Tuple[Tuple[int, ...], int], ...]] = None

    def __post_init__(self):
        self.mu = np.asarray(self.mu, float).ravel()
        self.shape = np.atleast_2d(np.asarray(self.shape, float))
        d = self.mu.size
        if self.shape.shape != (d, d):
            raise SetError(f"shape must be {d}x{d}, got {self.shape.shape}")
        if int(self.budget) != self.budget:
            raise SetError("budget must be an integer")
        self.budget = int(self.budget)
        if self.blocks is None:
            if not 1 <= self.budget <= d:
                raise SetError(f"budget {self.budget} outside [1, {d}]")
        else:
            self.blocks = tuple((tuple(int(i) for i in idx), int(b)) for idx, b in self.blocks)
            covered = sorted(i for idx, _ in self.blocks for i in idx)
            if covered != list(range(d)):
                raise SetError("blocks must partition the coordinates")
            for idx, b in self.blocks:
                if not 1 <= b <= len(idx):
                    raise SetError(f"block budget {b} outside [1, {len(idx)}]")

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def degenerate(self) -> bool:
        s = np.linalg.svd(self.shape, compute_uv=False)
        return bool(s.size == 0 or s[0] == 0.0 or s[-1] <= 1e-10 * s[0])

    def budget_groups(self):
        """[(indices, budget)] covering all coordinates."""
        if self.blocks is None:
            return [(tuple(range(self.dim)), self.budget)]
        return list(self.blocks)

    def point(self, z) -> np.ndarray:
        return self.mu + self.shape @ np.asarray(z, float)

    def latent(self, u) -> Optional[np.ndarray]:
        """z with u = mu + S z when S is invertible, else None."""
        if self.degenerate:
            return None
        return np.linalg.solve(self.shape, np.asarray(u, float) - self.mu)

    def contains(self, u, tol: float = 1e-9) -> bool:
        """Membership test; exact solve for full-rank S, LP otherwise."""
        z = self.latent(u)
        if z is None:
            return _contains_lp(self, np.asarray(u, float), tol)
        if np.max(np.abs(z), initial=0.0) > 1 + tol:
            return False
        return all(np.sum(np.abs(z[list(idx)])) <= b + tol for idx, b in self.budget_groups())

    def to_dict(self):
        out = {"mu": self.mu.tolist(), "kappa": self.kappa, "shape": self.shape.tolist(),
               "budget": self.budget, "gamma": self.gamma}
        if self.blocks is not None:
            out["blocks"] = [{"indices": list(idx), "budget": b} for idx, b in self.blocks]
        return out

    @classmethod
    def from_dict(cls, d):
        blocks = None
        if d.get("blocks"):
            blocks = tuple((tuple(b["indices"]), b["budget"]) for b in d["blocks"])
        return cls(np.asarray(d["mu"], float), float(d["kappa"]), np.asarray(d["shape"], float),
                   int(d["budget"]), float(d.get("gamma", 1.0)), blocks)


def _contains_lp(bs, u, tol):
    from .lp import build_lp, solve_lp

    d = bs.dim
    # variables: z (free in [-1,1]) and t >= |z|
    c = np.zeros(2 * d)
    rows = []
    for i in range(d):
        rows.append((np.concatenate([bs.shape[i], np.zeros(d)]), "==", u[i] - bs.mu[i]))
    for j in range(d):
        e = np.zeros(2 * d)
        e[j], e[d + j] = 1.0, -1.0
        rows.append((e, "<=", 0.0))
        e = np.zeros(2 * d)
        e[j], e[d + j] = -1.0, -1.0
        rows.append((e, "<=", 0.0))
    for idx, b in bs.budget_groups():
        e = np.zeros(2 * d)
        e[[d + i for i in idx]] = 1.0
        rows.append((e, "<=", b))
    bounds = [(-1.0, 1.0)] * d + [(0.0, 1.0)] * d
    sol = solve_lp(build_lp(c, rows, bounds=bounds))
    return sol.status == "optimal"


@dataclass
class UncertaintySetUnion:
    class_id: int
    basics: List[BasicUncertaintySet]

    def __post_init__(self):
        if not self.basics:
            raise SetError("uncertainty set union must be non-empty")

    @property
    def dim(self) -> int:
        return self.basics[0].dim

    def contains(self, u) -> bool:
        return any(b.contains(u) for b in self.basics)

    def to_dict(self):
        return {"class_id": self.class_id, "basics": [b.to_dict() for b in self.basics]}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("class_id", 0), [BasicUncertaintySet.from_dict(b) for b in d["basics"]])


def _latent_vertices(groups, dim):
    per_block = []
    for idx, b in groups:
        k = min(b, len(idx))
        verts = []
        for support in itertools.combinations(idx, k):
            for signs in itertools.product((-1.0, 1.0), repeat=k):
                verts.append((support, signs))
        per_block.append(verts)
    for combo in itertools.product(*per_block):
        z = np.zeros(dim)
        for support, signs in combo:
            z[list(support)] = signs
        yield z


def enumerate_latent_vertices(bs: BasicUncertaintySet) -> List[np.ndarray]:
    if bs.dim > MAX_ENUM_DIM:
        raise SetError(f"dim {bs.dim} too large for vertex enumeration (max {MAX_ENUM_DIM})")
    return list(_latent_vertices(bs.budget_groups(), bs.dim))


def enumerate_vertices(bs: BasicUncertaintySet) -> List[np.ndarray]:
    """Images of the latent polytope's extreme points, u = mu + S z."""
    return [bs.point(z) for z in enumerate_latent_vertices(bs)]


def vertex_count(bs: BasicUncertaintySet) -> int:
    n = 1
    for idx, b in bs.budget_groups():
        k = min(b, len(idx))
        n *= math.comb(len(idx), k) * 2**k
    return n


def box_from_data(points) -> BasicUncertaintySet:
    """Axis-aligned bounding box of the data as a basic set with full budget."""
    X = np.atleast_2d(np.asarray(points, float))
    if X.shape[0] < 1:
        raise SetError("need at least one point")
    lo, hi = X.min(axis=0), X.max(axis=0)
    return BasicUncertaintySet((lo + hi) / 2.0, 1.0, np.diag((hi - lo) / 2.0), X.shape[1])


def _coverage_scale(S, mu, groups, X, weights, target):
    """Smallest eta such that a ``target`` weighted fraction of X lies in the
    set scaled by eta."""
    Z = np.linalg.solve(S, (X - mu).T).T
    need = np.max(np.abs(Z), axis=1)
    for idx, b in groups:
        need = np.maximum(need, np.sum(np.abs(Z[:, list(idx)]), axis=1) / b)
    order = np.argsort(need, kind="stable")
    w = weights[order]
    cum = np.cumsum(w) / w.sum()
    pos = int(np.searchsorted(cum, target - 1e-12))
    return float(need[order][min(pos, need.size - 1)])


def build_union(post: MixturePosterior, gamma_star: float, budget: int, scaling: str = "identity",
                points=None, coverage: float = 0.95) -> UncertaintySetUnion:
    """One basic set per component with weight >= gamma_star.

    ``scaling`` is ``"identity"`` (Lambda = I) or ``"coverage"``: Lambda =
    eta I with the smallest eta placing a ``coverage`` fraction of the
    component's responsibility-weighted ``points`` inside the set.
    """
    keep = effective_components(post, gamma_star)
    d = post.dim
    if not 1 <= budget <= d:
        raise SetError(f"budget {budget} outside [1, {d}]")
    if scaling not in ("identity", "coverage"):
        raise SetError(f"unknown scaling policy {scaling!r}")
    if scaling == "coverage":
        if points is None:
            raise SetError("coverage scaling needs the class data points")
        X = np.asarray(points, float)
        R = responsibilities(post, X)
    basics = []
    for i in keep:
        comp = post.components[i]
        kappa = compute_kappa(comp.lam, comp.omega, d)
        root = sqrtm_psd(comp.psi)
        S = kappa * root
        if scaling == "coverage":
            eta = _coverage_scale(S, comp.mu, [(tuple(range(d)), budget)], X, R[:, i], coverage)
            S = S * eta
        basics.append(BasicUncertaintySet(comp.mu.copy(), kappa, S, budget, float(post.weights[i])))
    return UncertaintySetUnion(post.class_id, basics)


def product_union(class_id, first: UncertaintySetUnion, second: UncertaintySetUnion) -> UncertaintySetUnion:
    """Block-diagonal cross product: every pairing of a basic set of ``first``
    with one of ``second``, each block keeping its own budget."""
    d1, d2 = first.dim, second.dim
    basics = []
    for a in first.basics:
        for b in second.basics:
            S = np.zeros((d1 + d2, d1 + d2))
            S[:d1, :d1] = a.shape
            S[d1:, d1:] = b.shape
            ga = a.budget_groups()
            gb = [(tuple(i + d1 for i in idx), bud) for idx, bud in b.budget_groups()]
            basics.append(BasicUncertaintySet(np.concatenate([a.mu, b.mu]), 1.0, S, a.budget + b.budget,
                                              a.gamma * b.gamma, tuple(ga + gb)))
    return UncertaintySetUnion(class_id, basics)


def single_union(bs: BasicUncertaintySet, class_id: int = 0) -> UncertaintySetUnion:
    return UncertaintySetUnion(class_id, [bs])
