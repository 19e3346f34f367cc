from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
import pytest

from pushrelabel_ot import AssignmentInstance, OTInstance, ParameterError
from pushrelabel_ot.oracles import brute_force_matching, exact_ot, hungarian_exact

from conftest import random_instance


def two_row_optimum(inst: OTInstance) -> Fraction | float:
    """Optimal cost of a 2 x m transport problem.

    Row 0 picks x_j in [0, nu_j] with sum mu_0; the cost is linear in x with
    slope c0j - c1j, so filling the smallest slopes first is optimal.
    """
    c = inst.cost
    left = inst.mu[0]
    x0 = [Fraction(0)] * inst.n_b
    for j in sorted(range(inst.n_b), key=lambda j: c[0, j] - c[1, j]):
        x0[j] = min(left, inst.nu[j])
        left -= x0[j]
    return sum(float(x0[j]) * c[0, j] + float(inst.nu[j] - x0[j]) * c[1, j]
               for j in range(inst.n_b))


def test_hungarian_small_known():
    inst = AssignmentInstance(np.array([[0.9, 0.1, 0.5], [0.2, 0.8, 0.6], [0.4, 0.3, 0.7]]))
    m, cost = hungarian_exact(inst)
    assert cost == pytest.approx(0.1 + 0.2 + 0.7)
    assert m.is_consistent() and len(m) == 3


@pytest.mark.parametrize("seed", range(20))
def test_hungarian_equals_brute_force(seed):
    rng = np.random.default_rng(seed)
    n_a, n_b = rng.integers(1, 7, size=2)
    inst = random_instance(n_a, n_b, seed)
    assert hungarian_exact(inst)[1] == pytest.approx(brute_force_matching(inst), abs=1e-12)


def test_caps():
    with pytest.raises(ParameterError):
        brute_force_matching(AssignmentInstance(np.zeros((10, 10))))
    with pytest.raises(ParameterError):
        hungarian_exact(AssignmentInstance(np.zeros((3, 3))), cap=2)
    with pytest.raises(ParameterError):
        exact_ot(OTInstance(np.zeros((65, 1)), [1 / 65] * 65, [1.0]))


@pytest.mark.parametrize("seed", range(15))
@pytest.mark.parametrize("m", [2, 3])
def test_exact_ot_two_rows(seed, m):
    rng = np.random.default_rng(100 + seed)
    mu = rng.random(2) + 0.1
    nu = rng.random(m) + 0.1
    inst = OTInstance(rng.random((2, m)), mu / mu.sum(), nu / nu.sum())
    plan, cost = exact_ot(inst)
    assert cost == pytest.approx(two_row_optimum(inst), abs=1e-12)
    assert plan.supply_marginals(m) == list(inst.nu)
    assert plan.demand_marginals(2) == list(inst.mu)


@pytest.mark.parametrize("seed", range(10))
def test_exact_ot_uniform_equals_assignment(seed):
    # with masses 1/n a permutation plan is optimal (Birkhoff)
    inst = random_instance(3, 3, seed)
    ot = OTInstance(inst.cost, [Fraction(1, 3)] * 3, [Fraction(1, 3)] * 3)
    _, cost = exact_ot(ot)
    best = min(sum(inst.cost[i, p[i]] for i in range(3)) for p in itertools.permutations(range(3)))
    assert cost == pytest.approx(best / 3, abs=1e-12)


def test_exact_ot_3x3_vertex_enumeration():
    # every vertex of the 3x3 transport polytope is a basic solution on a spanning tree
    rng = np.random.default_rng(42)
    mu = np.array([0.2, 0.5, 0.3])
    nu = np.array([0.4, 0.35, 0.25])
    c = rng.random((3, 3))
    inst = OTInstance(c, mu, nu)
    cells = [(i, j) for i in range(3) for j in range(3)]
    best = np.inf
    for support in itertools.combinations(cells, 5):
        A = np.zeros((6, 5))
        for k, (i, j) in enumerate(support):
            A[i, k] = 1
            A[3 + j, k] = 1
        x, *_ = np.linalg.lstsq(A, np.r_[mu, nu], rcond=None)
        if np.allclose(A @ x, np.r_[mu, nu], atol=1e-12) and (x > -1e-12).all():
            best = min(best, sum(x[k] * c[i, j] for k, (i, j) in enumerate(support)))
    assert exact_ot(inst)[1] == pytest.approx(best, abs=1e-12)
