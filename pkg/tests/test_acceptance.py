"""The nine acceptance criteria, each at its stated tolerance.

Every test prints (and records for the terminal summary) one line
``criterion k: PASS|FAIL - detail``.  Nothing here is loosened: a criterion
that cannot be met fails.
"""

import functools
import itertools
import time

import numpy as np
import pytest

import conftest
from ddsro.dataio import ClassDistribution, LabeledDataset, estimate_class_probabilities
from ddsro.dpmm import DpmmConfig, effective_components, fit_dpmm
from ddsro.lp import LinearProgram, build_lp, solve_lp, solve_milp, strong_duality_residual
from ddsro.models import build_motivating_example, gen_synthetic_motivating, solve_deterministic
from ddsro.models.planning import (PlanningInstance, budget_violation, build_planning_problem,
                                   expansion_without_decision, gen_planning_data, mass_balance_residual,
                                   planning_layout)
from ddsro.pipeline import fit_planning_model, fit_uncertainty_model, run_benchmark, solve_model
from ddsro.robust import DdsroInstance, solve_ddanro, solve_ddsro, solve_subproblem

from instances import random_lp, random_milp, random_problem, random_subproblem_case, random_union
from oracles import budget_vertices, inner_recourse_value, lp_vertex_optimum, milp_binary_enumeration


def criterion(k, title):
    """Record ``criterion k: PASS/FAIL`` for the test; body returns (ok, detail)."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kw):
            try:
                ok, detail = fn(*args, **kw)
            except Exception as exc:  # record, then let pytest report the error
                line = f"criterion {k} ({title}): FAIL - {type(exc).__name__}: {exc}"
                print(line)
                conftest.ACCEPTANCE_LINES.append(line)
                raise
            line = f"criterion {k} ({title}): {'PASS' if ok else 'FAIL'} - {detail}"
            print(line)
            conftest.ACCEPTANCE_LINES.append(line)
            assert ok, line

        return run

    return wrap


def _vertex_max(p, x, bs):
    return max(inner_recourse_value(p, x, bs.point(z)) for z in budget_vertices(bs.dim, bs.budget))


def _glover_reference(p, x, bs):
    best = -np.inf
    for signs in itertools.product((-1.0, 0.0, 1.0), repeat=bs.dim):
        z = np.array(signs)
        if np.sum(np.abs(z)) <= bs.budget:
            r = p.h - p.T @ x - p.M @ bs.point(z)
            best = max(best, lp_vertex_optimum(r, p.W.T, ["<="] * p.n_y, p.b, np.zeros(p.n_rows), sense="max"))
    return best


SUBPROBLEM_CASES = [random_subproblem_case(np.random.default_rng(1000 + i)) for i in range(20)]


@criterion(1, "subproblem vs vertex oracle")
def test_criterion_1_subproblem_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for p, x, bs in SUBPROBLEM_CASES:
        assert bs.dim <= 4 and bs.budget in (1, 2) and p.n_y <= 6
        worst = max(worst, abs(solve_subproblem(x, bs, p).value - _vertex_max(p, x, bs)))
    wall = time.perf_counter() - t0
    return worst <= 1e-6 and wall <= 10.0, f"max |diff| = {worst:.2e} (<= 1e-6), {wall:.2f} s (<= 10 s)"


@criterion(2, "Glover linearization exactness")
def test_criterion_2_glover_exact():
    worst = 0.0
    for p, x, bs in SUBPROBLEM_CASES:
        worst = max(worst, abs(solve_subproblem(x, bs, p).value - _glover_reference(p, x, bs)))
    return worst <= 1e-6, f"max |diff| = {worst:.2e} over {len(SUBPROBLEM_CASES)} instances (<= 1e-6)"


@criterion(3, "single class reduces to DDANRO")
def test_criterion_3_special_case():
    worst = 0.0
    for i in range(10):
        rng = np.random.default_rng(3000 + i)
        p = random_problem(rng)
        union = random_union(rng, p.dim_u, class_id=0)
        a = solve_ddsro(DdsroInstance(p, ClassDistribution({0: 1.0}), {0: union}, zeta=1e-9))
        b = solve_ddanro(p, union, zeta=1e-9)
        worst = max(worst, abs(a.objective - b.objective))
    return worst <= 1e-6, f"max |diff| = {worst:.2e} over 10 instances (<= 1e-6)"


@pytest.fixture(scope="module")
def motivating():
    t0 = time.perf_counter()
    ds = gen_synthetic_motivating(seed=0)
    model = fit_uncertainty_model(ds, gamma_star=0.05, budget=2)
    rep = solve_model(build_motivating_example(), model, zeta=1e-3, max_iters=50)
    return ds, model, rep, time.perf_counter() - t0


@criterion(4, "decomposition convergence")
def test_criterion_4_convergence(motivating):
    _, _, rep, wall = motivating
    lb_ok = all(b >= a - 1e-9 for a, b in zip(rep.lower_bounds, rep.lower_bounds[1:]))
    ub_ok = all(b <= a + 1e-9 for a, b in zip(rep.upper_bounds, rep.upper_bounds[1:]))
    ok = rep.converged and rep.gap <= 1e-3 and rep.iterations <= 10 and lb_ok and ub_ok and wall <= 120
    return ok, (f"gap {rep.gap:.2e} after {rep.iterations} iterations (<= 10), LB monotone {lb_ok}, "
                f"UB monotone {ub_ok}, pipeline {wall:.1f} s (<= 120 s)")


@criterion(5, "method ordering")
def test_criterion_5_ordering(motivating):
    ds, labeled, _, _ = motivating
    unlabeled = fit_uncertainty_model(ds, gamma_star=0.05, budget=2, merged=True)
    rows = run_benchmark(build_motivating_example(), ds.points, labeled, unlabeled, sp_samples=100, seed=0)
    obj = {r.method: r.objective for r in rows}
    order = ["deterministic", "scenario_sp", "ddsro", "ddanro", "box_aro"]
    slacks = [obj[b] - obj[a] for a, b in zip(order, order[1:])]
    excess = obj["ddanro"] / obj["ddsro"] - 1.0
    ok = min(slacks) >= -1e-6 and excess >= 0.05
    table = ", ".join(f"{m} {obj[m]:.1f}" for m in order)
    return ok, f"{table}; min slack {min(slacks):.2f}; DDANRO exceeds DDSRO by {100 * excess:.1f}% (>= 5%)"


@criterion(6, "class probability MLE")
def test_criterion_6_class_probabilities():
    runs = [estimate_class_probabilities(gen_synthetic_motivating(seed=s)).as_list() for s in (0, 0, 3)]
    # the estimate depends only on the counts: shuffled rows give the same bits
    ds = gen_synthetic_motivating(seed=0)
    perm = np.random.default_rng(0).permutation(len(ds))
    shuffled = LabeledDataset.from_labels(ds.points[perm], [ds.class_names[int(l)] for l in ds.labels[perm]])
    by_name = dict(zip(shuffled.class_names, estimate_class_probabilities(shuffled).as_list()))
    runs.append([by_name[n] for n in ds.class_names])
    target = [0.2, 0.4, 0.3, 0.1]
    ok = all(r == target for r in runs)
    return ok, f"estimates {runs[0]} identical across {len(runs)} runs: {ok}"


def _two_clusters(seed, n=400, sep=10.0):
    rng = np.random.default_rng(seed)
    return np.vstack([rng.normal(size=(n // 2, 2)), rng.normal(size=(n - n // 2, 2)) + [sep, 0.0]])


@criterion(7, "DPMM properties")
def test_criterion_7_dpmm():
    mot = gen_synthetic_motivating(seed=0)
    datasets = {
        "two clusters": lambda s: _two_clusters(100 + s),
        "bimodal 3-D class": lambda s: mot.class_points(1),
        "unimodal 3-D class": lambda s: mot.class_points(3),
    }
    worst_drop = 0.0
    for name, make in datasets.items():
        for s in range(5):
            trace = np.asarray(fit_dpmm(make(s), DpmmConfig(seed=s)).elbo_trace)
            worst_drop = max(worst_drop, float(np.max(-np.diff(trace), initial=0.0)))
    monotone = worst_drop <= 1e-8

    post = fit_dpmm(_two_clusters(0), DpmmConfig(seed=0))
    keep = effective_components(post, 0.05)
    weights = sorted(float(post.weights[i]) for i in keep)
    two_ok = len(keep) == 2 and all(abs(w - 0.5) <= 0.1 for w in weights)

    hits = []
    for s in range(5):
        ds = gen_synthetic_motivating(seed=s)
        counts = tuple(len(effective_components(fit_dpmm(ds.class_points(c), DpmmConfig(seed=s)), 0.05))
                       for c in ds.class_ids)
        hits.append(counts == (2, 2, 2, 1))
    ok = monotone and two_ok and sum(hits) >= 4
    return ok, (f"largest ELBO decrease {worst_drop:.1e} (<= 1e-8) over 15 fits; two-cluster weights "
                f"{[round(w, 3) for w in weights]}; (2,2,2,1) recovered for {sum(hits)}/5 seeds (>= 4)")


@criterion(8, "LP/MILP engine")
def test_criterion_8_lp_engine():
    lp_err = milp_err = dual_res = 0.0
    for seed in range(20):
        rng = np.random.default_rng(8000 + seed)
        c, A, rel, rhs, sense = random_lp(rng)
        p = LinearProgram(c, A, rel, rhs, sense=sense)
        sol = solve_lp(p)
        ref = lp_vertex_optimum(c, A, rel, rhs, np.zeros(c.size), sense)
        lp_err = max(lp_err, abs(sol.objective - ref))
        dual_res = max(dual_res, strong_duality_residual(p, sol))
    for seed in range(20):
        rng = np.random.default_rng(8100 + seed)
        c, A, rel, rhs, sense, bounds, integ, bidx = random_milp(rng)
        p = build_lp(c, list(zip(A, rel, rhs)), sense=sense, bounds=bounds, integrality=integ)
        nb = len(bidx)
        ref = milp_binary_enumeration(c, np.vstack([A, np.eye(c.size)[:nb]]), rel + ["<="] * nb,
                                      np.concatenate([rhs, np.ones(nb)]), bidx, sense)
        milp_err = max(milp_err, abs(solve_milp(p).objective - ref))
    ok = lp_err <= 1e-7 and milp_err <= 1e-6 and dual_res <= 1e-6
    return ok, (f"LP max |diff| {lp_err:.1e} (<= 1e-7); MILP max |diff| {milp_err:.1e} (<= 1e-6); "
                f"strong-duality residual {dual_res:.1e} (<= 1e-6)")


@criterion(9, "planning structure and convergence")
def test_criterion_9_planning():
    pi = PlanningInstance.load()
    p = build_planning_problem(pi)
    lay = planning_layout(pi)
    dem, sup = gen_planning_data(seed=0)
    model = fit_planning_model(pi, dem, sup, gamma_star=0.05, phi_dem=1, phi_sup=1)
    t0 = time.perf_counter()
    rep = solve_model(p, model, zeta=1e-3, max_iters=15)
    wall = time.perf_counter() - t0
    det = solve_deterministic(p, np.concatenate([dem.points.mean(axis=0), sup.points.mean(axis=0)]))

    solutions = [(rep.x, y) for y in rep.second_stage.values()] + [(det.x, det.second_stage["fixed"])]
    balance = max(mass_balance_residual(pi, y) for _, y in solutions)
    budget = max(budget_violation(pi, x) for x, _ in solutions)
    no_decision = max(expansion_without_decision(pi, x) for x, _ in solutions)
    y_vals = np.concatenate([np.asarray(x)[lay.Y.ravel()] for x, _ in solutions])
    binary = bool(np.all(np.isin(y_vals, (0.0, 1.0))))
    ok = (balance <= 1e-7 and budget <= 1e-7 and no_decision <= 1e-7 and binary and rep.converged
          and rep.gap <= 1e-3 and rep.iterations <= 15 and wall <= 300)
    return ok, (f"mass balance {balance:.1e}, budget {budget:.1e}, max QE with Y=0 {no_decision:.1e} (all <= 1e-7); "
                f"NPV {rep.objective:.2f}, gap {rep.gap:.1e} after {rep.iterations} iterations (<= 15) "
                f"in {wall:.1f} s (<= 300 s)")
