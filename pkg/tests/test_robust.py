import itertools

import numpy as np
import pytest

from ddsro.dataio import ClassDistribution
from ddsro.models.comparators import solve_box_aro, solve_deterministic
from ddsro.models.problem import CompactProblem, ProblemError
from ddsro.robust import (DdsroInstance, IncompleteRecourseError, RobustError, big_m_bound,
                          initial_state, solve_ddanro, solve_ddsro, solve_master, solve_subproblem,
                          with_recourse_slack)
from ddsro.sets import BasicUncertaintySet, UncertaintySetUnion, box_from_data, single_union

from instances import random_classes, random_problem, random_subproblem_case, random_union
from oracles import budget_vertices, inner_recourse_value, lp_vertex_optimum


def vertex_max(p, x, bs):
    """max over the set's vertices of the inner recourse LP (convexity of Q in u)."""
    return max(inner_recourse_value(p, x, bs.point(z)) for z in budget_vertices(bs.dim, bs.budget))


def glover_enumeration(p, x, bs):
    """Enumerate every admissible (z+, z-) and solve the LP in phi for each."""
    best = -np.inf
    for signs in itertools.product((-1.0, 0.0, 1.0), repeat=bs.dim):
        z = np.array(signs)
        if np.sum(np.abs(z)) > bs.budget:
            continue
        r = p.h - p.T @ x - p.M @ bs.point(z)
        v = lp_vertex_optimum(r, p.W.T, ["<="] * p.n_y, p.b, np.zeros(p.n_rows), sense="max")
        best = max(best, v)
    return best


def robust_brute_force(p, probs, unions):
    """Enumerate the integer first stage and the vertices of every basic set."""
    best = np.inf
    for x in itertools.product(*[range(int(u) + 1) for u in p.x_ub]):
        x = np.array(x, float)
        if not p.first_stage_feasible(x):
            continue
        v = float(p.c @ x) + sum(probs[s] * max(vertex_max(p, x, bs) for bs in unions[s].basics)
                                 for s in probs.class_ids)
        best = min(best, v)
    return best


# --- subproblem ----------------------------------------------------------


@pytest.mark.parametrize("seed", range(20))
def test_subproblem_matches_vertex_oracle(seed):  # [DERIVED] vertex enumeration + inner LP
    p, x, bs = random_subproblem_case(np.random.default_rng(seed))
    res = solve_subproblem(x, bs, p)
    assert res.value == pytest.approx(vertex_max(p, x, bs), abs=1e-6)
    assert bs.contains(res.worst_u, tol=1e-7)
    assert p.recourse(x, res.worst_u).objective == pytest.approx(res.value, abs=1e-6)


@pytest.mark.parametrize("seed", range(20))
def test_glover_linearization_exact(seed):  # [DERIVED] (z+, z-) enumeration + LP in phi
    p, x, bs = random_subproblem_case(np.random.default_rng(seed))
    ref = glover_enumeration(p, x, bs)
    assert solve_subproblem(x, bs, p).value == pytest.approx(ref, abs=1e-6)
    assert solve_subproblem(x, bs, p, full_envelope=True).value == pytest.approx(ref, abs=1e-6)


def test_big_m_scaling_invariance():  # [DERIVED] any valid bound gives the same optimum
    rng = np.random.default_rng(7)
    for _ in range(5):
        p, x, bs = random_subproblem_case(rng)
        m0, fb = big_m_bound(p)
        assert not fb
        a = solve_subproblem(x, bs, p, m0=m0).value
        b = solve_subproblem(x, bs, p, m0=10 * m0).value
        assert a == pytest.approx(b, abs=1e-6)


def test_degenerate_set_is_recourse_at_mu():  # [TRIVIAL]
    p, x, _ = random_subproblem_case(np.random.default_rng(3))
    bs = BasicUncertaintySet(np.full(p.dim_u, 0.5), 1.0, np.zeros((p.dim_u, p.dim_u)), 1)
    res = solve_subproblem(x, bs, p)
    assert res.value == pytest.approx(inner_recourse_value(p, x, bs.mu), abs=1e-9)
    np.testing.assert_allclose(res.worst_u, bs.mu)


def _tiny(W, b):
    m2 = len(W)
    return CompactProblem([1.0], b, np.zeros((0, 1)), [], W, np.zeros(m2), np.zeros((m2, 1)), np.eye(m2))


def test_big_m_examples():  # [TRIVIAL] hand-computed dual bounds
    vals, fb = big_m_bound(_tiny(np.eye(2), [1.0, 1.0]))
    np.testing.assert_allclose(vals, [1.0, 1.0])
    assert fb == []
    vals, fb = big_m_bound(_tiny(np.eye(2), [2.0, 5.0]))
    np.testing.assert_allclose(vals, [2.0, 5.0])
    # phi_1 - phi_2 <= 1: phi_2 is free to grow
    vals, fb = big_m_bound(_tiny([[1.0], [-1.0]], [1.0]), fallback=1e6)
    assert fb == [0, 1] and vals[0] == 1e6


def test_big_m_empty_dual_polytope():  # [TRIVIAL] negative cost on a free direction
    with pytest.raises(ProblemError, match="dual polytope is empty"):
        big_m_bound(_tiny([[1.0]], [-1.0]))


def _incomplete_problem():
    # -y >= -4 + u  (y >= 0) is infeasible once u > 4
    return CompactProblem([1.0], [1.0], np.zeros((0, 1)), [], [[-1.0]], [-4.0], [[0.0]], [[-1.0]], x_ub=[5.0])


def test_incomplete_recourse_detected():  # [TRIVIAL]
    p = _incomplete_problem()
    bs = BasicUncertaintySet([3.0], 1.0, [[2.0]], 1)
    with pytest.raises(IncompleteRecourseError, match="incomplete recourse") as err:
        solve_subproblem(np.zeros(1), bs, p)
    assert err.value.u is not None and err.value.u[0] > 4
    with pytest.raises(IncompleteRecourseError):
        solve_ddanro(p, single_union(bs))


def test_slack_mode_restores_feasibility():  # [DERIVED] penalty cost at the worst point
    p = _incomplete_problem()
    bs = BasicUncertaintySet([3.0], 1.0, [[2.0]], 1)
    rep = solve_ddanro(p, single_union(bs), slack=True)
    assert rep.converged and rep.flags["slack_mode"]
    ps = with_recourse_slack(p)
    assert ps.n_y == 2 and ps.b[1] == pytest.approx(1e6)
    # at u = 5 the slack must absorb 1 unit
    assert rep.objective == pytest.approx(1e6, rel=1e-9)


# --- master and main loop ---------------------------------------------------


def test_master_lower_bound_monotone():  # [DERIVED] adding points only tightens the master
    rng = np.random.default_rng(11)
    p = random_problem(rng, dim_u=2)
    probs, unions = random_classes(rng, 2, 2)
    inst = DdsroInstance(p, probs, unions)
    state = initial_state(inst)
    last = -np.inf
    for _ in range(4):
        x, eta, lb = solve_master(state, inst)
        assert lb >= last - 1e-9
        last = lb
        for s in inst.classes:
            state.points[s].append(unions[s].basics[0].point(rng.uniform(-1, 1, 2) / 2))


@pytest.mark.parametrize("seed", range(6))
def test_ddsro_matches_brute_force(seed):  # [DERIVED] grid over integer x, vertices over u
    rng = np.random.default_rng(100 + seed)
    p = random_problem(rng, dim_u=2, integer=True)
    probs, unions = random_classes(rng, 2, 2)
    rep = solve_ddsro(DdsroInstance(p, probs, unions, zeta=1e-9))
    ref = robust_brute_force(p, probs, unions)
    assert rep.converged
    assert rep.objective == pytest.approx(ref, abs=1e-6)
    # bound sandwich and monotone trajectories
    assert all(lb <= ref + 1e-6 for lb in rep.lower_bounds)
    assert all(ub >= ref - 1e-6 for ub in rep.upper_bounds)
    assert all(np.diff(rep.lower_bounds) >= -1e-9) and all(np.diff(rep.upper_bounds) <= 1e-9)
    assert all(np.diff(rep.gaps) <= 1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_single_class_is_ddanro(seed):  # [DERIVED] special case
    rng = np.random.default_rng(200 + seed)
    p = random_problem(rng)
    union = random_union(rng, p.dim_u, class_id=5)
    a = solve_ddsro(DdsroInstance(p, ClassDistribution({5: 1.0}), {5: union}, zeta=1e-9))
    b = solve_ddanro(p, union, zeta=1e-9)
    assert a.objective == pytest.approx(b.objective, abs=1e-6)
    # identical sets in every class collapse to the single-class problem
    w = ClassDistribution({0: 0.25, 1: 0.75})
    c = solve_ddsro(DdsroInstance(p, w, {0: union, 1: union}, zeta=1e-9))
    assert c.objective == pytest.approx(b.objective, abs=1e-6)


def test_class_permutation_invariance():  # [DERIVED] relabelling changes nothing
    rng = np.random.default_rng(5)
    p = random_problem(rng, dim_u=3)
    probs, unions = random_classes(rng, 3, 3)
    a = solve_ddsro(DdsroInstance(p, probs, unions, zeta=1e-9))
    perm = {0: 2, 1: 0, 2: 1}
    probs2 = ClassDistribution({perm[s]: probs[s] for s in (2, 0, 1)})
    unions2 = {perm[s]: UncertaintySetUnion(perm[s], unions[s].basics) for s in unions}
    b = solve_ddsro(DdsroInstance(p, probs2, unions2, zeta=1e-9))
    assert a.objective == pytest.approx(b.objective, abs=1e-6)


def test_zero_uncertainty_is_deterministic():  # [DERIVED]
    rng = np.random.default_rng(9)
    p = random_problem(rng, dim_u=3)
    mu = np.array([0.3, -0.2, 0.5])
    bs = BasicUncertaintySet(mu, 1.0, np.zeros((3, 3)), 1)
    rep = solve_ddanro(p, single_union(bs))
    det = solve_deterministic(p, mu)
    assert rep.objective == pytest.approx(det.objective, abs=1e-6)


def test_box_aro_is_ddanro_on_bounding_box():  # [DERIVED]
    rng = np.random.default_rng(4)
    p = random_problem(rng, dim_u=2)
    pts = rng.normal(size=(50, 2))
    a = solve_box_aro(p, pts, zeta=1e-9)
    b = solve_ddanro(p, single_union(box_from_data(pts)), zeta=1e-9)
    assert a.method == "box_aro"
    assert a.objective == pytest.approx(b.objective, abs=1e-9)


def test_workers_do_not_change_the_result():  # [DERIVED] fixed merge order
    rng = np.random.default_rng(21)
    p = random_problem(rng, dim_u=3)
    probs, unions = random_classes(rng, 3, 3)
    a = solve_ddsro(DdsroInstance(p, probs, unions))
    b = solve_ddsro(DdsroInstance(p, probs, unions, workers=4))
    assert a.objective == b.objective and a.x == b.x and a.lower_bounds == b.lower_bounds


def test_non_convergence_is_reported():  # [TRIVIAL]
    rng = np.random.default_rng(1)
    p = random_problem(rng, dim_u=3)
    probs, unions = random_classes(rng, 3, 2)
    rep = solve_ddsro(DdsroInstance(p, probs, unions, max_iters=1, zeta=1e-12))
    if rep.gap > 1e-12:
        assert not rep.converged and rep.flags["non_converged"] and rep.status == "non_converged"


def test_instance_validation():  # [TRIVIAL]
    rng = np.random.default_rng(0)
    p = random_problem(rng, dim_u=2)
    probs, unions = random_classes(rng, 2, 2)
    with pytest.raises(RobustError, match="class ids"):
        DdsroInstance(p, ClassDistribution({0: 1.0}), unions)
    with pytest.raises(RobustError, match="dimension"):
        DdsroInstance(p, probs, {s: random_union(rng, 3, s) for s in (0, 1)})
    with pytest.raises(RobustError, match="zeta"):
        DdsroInstance(p, probs, unions, zeta=0.0)
