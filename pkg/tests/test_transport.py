from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from pushrelabel_ot import OTInstance, ParameterError, scale_and_round, solve_ot
from pushrelabel_ot.core import AssignmentInstance, scale_round_costs
from pushrelabel_ot.oracles import exact_ot
from pushrelabel_ot.transport import (
    ClusterState,
    check_cluster_invariant,
    solve_copies,
    solve_copies_explicit,
)


def random_ot(n_a, n_b, seed):
    rng = np.random.default_rng(seed)
    mu = rng.random(n_a) + 0.05
    nu = rng.random(n_b) + 0.05
    return OTInstance(rng.random((n_a, n_b)), mu / mu.sum(), nu / nu.sum())


def test_scale_and_round_exact():
    inst = OTInstance(np.zeros((2, 2)), [Fraction(1, 3), Fraction(2, 3)], [0.5, 0.5])
    sm = scale_and_round(inst, 0.5)
    # theta = 4 * 2 / 0.5 = 16
    assert sm.theta == 16
    assert sm.d.tolist() == [6, 11]   # ceil(16/3), ceil(32/3)
    assert sm.s.tolist() == [8, 8]
    assert sm.total_demand >= sm.total_supply


def test_point_masses():
    inst = OTInstance(np.array([[0.3, 0.9], [0.1, 0.4]]), [0.0, 1.0], [1.0, 0.0])
    plan, _ = solve_ot(inst, 0.1)
    assert plan.entries == [(1, 0, Fraction(1))]
    assert plan.cost == pytest.approx(0.1)


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("eps", [0.5, 0.2])
def test_cost_within_eps_and_marginals(seed, eps):
    inst = random_ot(6, 5, seed)
    plan, stats = solve_ot(inst, eps, verify=True)
    assert stats.violations == []
    assert plan.supply_marginals(5) == list(inst.nu)
    assert plan.demand_marginals(6) == list(inst.mu)
    assert all(m > 0 for _, _, m in plan.entries)
    _, opt = exact_ot(inst)
    assert plan.cost <= opt + eps + 1e-12


def test_cluster_invariant_holds_along_run():
    inst = random_ot(5, 5, 11)
    sm = scale_and_round(inst, 0.1)
    sc = scale_round_costs(AssignmentInstance(inst.cost), 0.1)
    _, stats, _ = solve_copies(sc, sm.d, sm.s, verify=True)
    assert stats.violations == []
    assert check_cluster_invariant(stats.info["final_state"]) == []


def test_cluster_invariant_detects_spread():
    sc = scale_round_costs(AssignmentInstance(np.zeros((1, 1))), 0.5)
    st = ClusterState(sc, np.array([3]), np.array([3]))
    st.ymax[0] = 3
    assert check_cluster_invariant(st)


@pytest.mark.parametrize("seed", range(25))
def test_cluster_matches_explicit_copies(seed):
    rng = np.random.default_rng(seed)
    n_a, n_b = rng.integers(1, 4, size=2)
    s = rng.integers(0, 4, size=n_b)
    d = rng.integers(0, 5, size=n_a)
    d[0] += max(0, s.sum() - d.sum())
    eps = float(rng.choice([0.5, 0.25, 0.2]))
    sc = scale_round_costs(AssignmentInstance(rng.integers(0, 5, (n_a, n_b)) / 4), eps)
    f1, st1, _ = solve_copies(sc, d, s, verify=True)
    f2, st2 = solve_copies_explicit(sc, d, s, verify=True)
    assert f1.tolist() == f2.tolist()
    assert st1.free_counts == st2.free_counts
    assert st1.violations == [] and st2.violations == []


def test_copies_need_enough_demand():
    sc = scale_round_costs(AssignmentInstance(np.zeros((1, 1))), 0.5)
    with pytest.raises(ParameterError):
        solve_copies(sc, [1], [2])


def test_deterministic():
    inst = random_ot(8, 8, 2)
    p1, s1 = solve_ot(inst, 0.2)
    p2, s2 = solve_ot(inst, 0.2)
    assert p1.entries == p2.entries and s1.free_counts == s2.free_counts
