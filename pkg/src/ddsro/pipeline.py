"""End-to-end helpers: data -> posteriors -> sets -> solves -> comparison rows."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .dataio import ClassDistribution, LabeledDataset, estimate_class_probabilities
from .dpmm import DpmmConfig, DpmmError, MixturePosterior, fit_dpmm
from .models.comparators import solve_box_aro, solve_deterministic, solve_scenario_sp
from .models.planning import PlanningInstance, build_demand_supply_unions, pooled_class_probabilities
from .models.problem import CompactProblem
from .report import SolveReport
from .robust import DdsroInstance, solve_ddanro, solve_ddsro
from .sets import SetError, UncertaintySetUnion, build_union, product_union

METHODS = ("deterministic", "scenario_sp", "ddsro", "ddanro", "box_aro")


class PipelineError(ValueError):
    pass


@dataclass
class UncertaintyModel:
    """Everything learned from labeled data, ready for the solvers."""

    probs: ClassDistribution
    unions: Dict[int, UncertaintySetUnion]
    posteriors: Dict[str, Dict[int, MixturePosterior]] = field(default_factory=dict)
    class_names: Dict[int, str] = field(default_factory=dict)
    settings: Dict[str, object] = field(default_factory=dict)

    def to_dict(self):
        return {
            "settings": self.settings,
            "class_names": {str(k): v for k, v in self.class_names.items()},
            "probabilities": {str(k): v for k, v in self.probs.probabilities.items()},
            "posteriors": {blk: {str(k): p.to_dict() for k, p in posts.items()}
                           for blk, posts in self.posteriors.items()},
            "unions": {str(k): u.to_dict() for k, u in self.unions.items()},
        }

    @classmethod
    def from_dict(cls, d):
        probs = ClassDistribution({int(k): float(v) for k, v in d["probabilities"].items()})
        unions = {int(k): UncertaintySetUnion.from_dict(u) for k, u in d["unions"].items()}
        posts = {blk: {int(k): MixturePosterior.from_dict(p) for k, p in v.items()}
                 for blk, v in d.get("posteriors", {}).items()}
        names = {int(k): v for k, v in d.get("class_names", {}).items()}
        return cls(probs, unions, posts, names, d.get("settings", {}))


def _fit_block(ds: LabeledDataset, cfg: DpmmConfig, on_fit=None) -> Dict[int, MixturePosterior]:
    posts = {}
    for cid, name in zip(ds.class_ids, ds.class_names):
        try:
            posts[cid] = fit_dpmm(ds.class_points(cid), cfg, class_id=cid)
        except DpmmError as exc:
            raise PipelineError(f"class {name}: {exc}") from exc
        if on_fit is not None:
            on_fit(cid, name, posts[cid])
    return posts


def fit_uncertainty_model(ds: LabeledDataset, gamma_star: float = 0.05, budget: int = 1,
                          cfg: Optional[DpmmConfig] = None, scaling: str = "identity",
                          merged: bool = False, on_fit=None) -> UncertaintyModel:
    """Class probabilities, one mixture per class and the per-class unions.

    ``merged`` ignores the labels (single class of probability 1).
    """
    cfg = cfg or DpmmConfig()
    if merged:
        ds = ds.merged()
    probs = estimate_class_probabilities(ds)
    posts = _fit_block(ds, cfg, on_fit)
    unions = {}
    for cid, name in zip(ds.class_ids, ds.class_names):
        try:
            unions[cid] = build_union(posts[cid], gamma_star, budget, scaling, ds.class_points(cid))
        except (DpmmError, SetError) as exc:
            raise PipelineError(f"class {name}: {exc}") from exc
    settings = {"gamma_star": gamma_star, "budget": budget, "scaling": scaling, "merged": merged,
                "truncation": cfg.truncation, "seed": cfg.seed}
    return UncertaintyModel(probs, unions, {"u": posts}, dict(zip(ds.class_ids, ds.class_names)), settings)


def fit_planning_model(pi: PlanningInstance, demand: LabeledDataset, supply: LabeledDataset,
                       gamma_star: float = 0.05, phi_dem: int = 1, phi_sup: int = 1,
                       cfg: Optional[DpmmConfig] = None, scaling: str = "identity",
                       merged: bool = False, on_fit=None) -> UncertaintyModel:
    """Joint demand x supply sets per policy class (labels matched by name)."""
    cfg = cfg or DpmmConfig()
    if merged:
        demand, supply = demand.merged(), supply.merged()
    if set(demand.class_names) != set(supply.class_names):
        raise PipelineError("demand and supply data have different class sets")
    # align supply class ids with demand ids through the label names
    remap = {sid: demand.class_ids[demand.class_names.index(n)]
             for sid, n in zip(supply.class_ids, supply.class_names)}
    supply = LabeledDataset(supply.points, [remap[int(l)] for l in supply.labels],
                            tuple(remap[c] for c in supply.class_ids), tuple(supply.class_names))
    probs = pooled_class_probabilities(demand, supply)
    dpost = _fit_block(demand, cfg, on_fit)
    spost = _fit_block(supply, cfg, on_fit)
    try:
        unions = build_demand_supply_unions(
            pi, dpost, spost, gamma_star, phi_dem, phi_sup, scaling,
            {c: demand.class_points(c) for c in demand.class_ids},
            {c: supply.class_points(c) for c in supply.class_ids})
    except (DpmmError, SetError) as exc:
        raise PipelineError(str(exc)) from exc
    settings = {"gamma_star": gamma_star, "budget_demand": phi_dem, "budget_supply": phi_sup,
                "scaling": scaling, "merged": merged, "truncation": cfg.truncation, "seed": cfg.seed}
    return UncertaintyModel(probs, unions, {"demand": dpost, "supply": spost},
                            dict(zip(demand.class_ids, demand.class_names)), settings)


def solve_model(problem: CompactProblem, model: UncertaintyModel, zeta: float = 1e-3, max_iters: int = 50,
                method: str = "ddsro", **kw) -> SolveReport:
    inst = DdsroInstance(problem, model.probs, model.unions, zeta, max_iters, **kw)
    return solve_ddsro(inst, method=method)


@dataclass
class BenchmarkRow:
    method: str
    objective: float
    iterations: Optional[int]
    cpu_seconds: float
    x: List[float]
    converged: bool = True


def run_benchmark(problem: CompactProblem, points: np.ndarray, labeled: UncertaintyModel,
                  unlabeled: UncertaintyModel, methods: Sequence[str] = METHODS, sp_samples: int = 100,
                  seed: int = 0, zeta: float = 1e-3, max_iters: int = 50,
                  scenarios: Optional[np.ndarray] = None) -> List[BenchmarkRow]:
    """Run the selected comparators on one problem.

    ``points`` are joint u samples (deterministic uses their mean, box ARO
    their bounding box); the scenario program draws ``sp_samples`` of them
    without replacement unless ``scenarios`` is given.
    """
    points = np.atleast_2d(np.asarray(points, float))
    rows = []
    for m in methods:
        if m not in METHODS:
            raise PipelineError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        t0 = time.process_time()
        if m == "deterministic":
            rep = solve_deterministic(problem, points.mean(axis=0))
        elif m == "scenario_sp":
            sc = scenarios
            if sc is None:
                rng = np.random.default_rng(seed)
                k = min(sp_samples, points.shape[0])
                sc = points[np.sort(rng.choice(points.shape[0], k, replace=False))]
            rep = solve_scenario_sp(problem, sc)
        elif m == "ddsro":
            rep = solve_model(problem, labeled, zeta, max_iters)
        elif m == "ddanro":
            (cid, union), = unlabeled.unions.items()
            rep = solve_ddanro(problem, union, zeta, max_iters)
        else:
            rep = solve_box_aro(problem, points, zeta, max_iters)
        rows.append(BenchmarkRow(m, rep.objective, rep.iterations if m in ("ddsro", "ddanro", "box_aro") else None,
                                 time.process_time() - t0, list(rep.x), rep.converged))
    return rows


def joint_samples(demand: LabeledDataset, supply: LabeledDataset, n: Optional[int] = None, seed: int = 0):
    """Joint (demand, supply) points: all pairs, or ``n`` random pairs."""
    D, S = demand.points, supply.points
    if n is None:
        return np.hstack([np.repeat(D, len(S), axis=0), np.tile(S, (len(D), 1))])
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(D), n)
    j = rng.integers(0, len(S), n)
    return np.hstack([D[i], S[j]])
