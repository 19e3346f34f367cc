"""Exact reference solvers, meant for tests and ``--verify`` runs only.

Not imported by the package ``__init__``; the solvers never depend on them.
"""

from __future__ import annotations

import heapq
import itertools
import math
from fractions import Fraction

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import AssignmentInstance, Matching, OTInstance, ParameterError, TransportPlan

HUNGARIAN_CAP = 512
BRUTE_FORCE_CAP = 9
EXACT_OT_CAP = 64


def hungarian_exact(inst: AssignmentInstance, cap: int = HUNGARIAN_CAP) -> tuple[Matching, float]:
    """Minimum-cost matching of cardinality ``min(n_a, n_b)``."""
    if max(inst.n_a, inst.n_b) > cap:
        raise ParameterError(f"instance of size {inst.cost.shape} exceeds the oracle cap {cap}")
    rows, cols = linear_sum_assignment(inst.cost)
    m = Matching.from_pairs(inst.n_a, inst.n_b, zip(rows.tolist(), cols.tolist()))
    # fsum: correctly rounded, so equal matchings give bit-identical totals in any order
    return m, math.fsum(inst.cost[rows, cols].tolist())


def brute_force_matching(inst: AssignmentInstance) -> float:
    """Minimum over every injection of the smaller side into the larger one."""
    c = inst.cost if inst.n_a <= inst.n_b else inst.cost.T
    r, n = c.shape
    if n > BRUTE_FORCE_CAP:
        raise ParameterError(f"brute force limited to {BRUTE_FORCE_CAP} vertices per side")
    rows = list(range(r))
    best = math.inf
    for perm in itertools.permutations(range(n), r):
        best = min(best, math.fsum(c[i, j] for i, j in zip(rows, perm)))
    return best


def _integer_masses(inst: OTInstance) -> tuple[list[int], list[int], int]:
    den = 1
    for x in itertools.chain(inst.mu, inst.nu):
        den = math.lcm(den, Fraction(x).denominator)
    return [int(x * den) for x in inst.mu], [int(x * den) for x in inst.nu], den


def exact_ot(inst: OTInstance, cap: int = EXACT_OT_CAP) -> tuple[TransportPlan, float]:
    """Optimal plan by successive shortest paths with potentials.

    Masses are scaled to integers by the common denominator, so the flow is
    exact; only the path costs are floating point.
    """
    if max(inst.n_a, inst.n_b) > cap:
        raise ParameterError(f"instance of size {inst.cost.shape} exceeds the oracle cap {cap}")
    dem, sup, den = _integer_masses(inst)
    c = inst.cost.tolist()
    n_a, n_b = inst.n_a, inst.n_b
    x = [[0] * n_b for _ in range(n_a)]
    pot_a = [0.0] * n_a
    pot_b = [0.0] * n_b
    left_b = list(sup)
    left_a = list(dem)
    inf = math.inf

    while any(left_b):
        # multi-source Dijkstra from supply vertices with mass left; side 1 = supply, 0 = demand
        dist_b = [0.0 if left_b[j] else inf for j in range(n_b)]
        dist_a = [inf] * n_a
        prev_a = [-1] * n_a
        prev_b = [-1] * n_b
        done_a = [False] * n_a
        done_b = [False] * n_b
        heap = [(0.0, 1, j) for j in range(n_b) if left_b[j]]
        heapq.heapify(heap)
        target = -1
        while heap:
            dv, side, v = heapq.heappop(heap)
            if side == 1:
                if done_b[v] or dv > dist_b[v]:
                    continue
                done_b[v] = True
                for i in range(n_a):
                    nd = dv + max(0.0, c[i][v] + pot_b[v] - pot_a[i])
                    if nd < dist_a[i]:
                        dist_a[i] = nd
                        prev_a[i] = v
                        heapq.heappush(heap, (nd, 0, i))
            else:
                if done_a[v] or dv > dist_a[v]:
                    continue
                done_a[v] = True
                if left_a[v]:
                    target = v
                    break
                for j in range(n_b):
                    if x[v][j] > 0:
                        nd = dv + max(0.0, -c[v][j] + pot_a[v] - pot_b[j])
                        if nd < dist_b[j]:
                            dist_b[j] = nd
                            prev_b[j] = v
                            heapq.heappush(heap, (nd, 1, j))
        if target < 0:
            raise ParameterError("transport instance is infeasible")
        dt = dist_a[target]
        for i in range(n_a):
            pot_a[i] += min(dist_a[i], dt)
        for j in range(n_b):
            pot_b[j] += min(dist_b[j], dt)

        path = []
        i = target
        while True:
            j = prev_a[i]
            path.append((i, j))
            if prev_b[j] < 0:
                break
            i = prev_b[j]
        start = path[-1][1]
        push = min(left_b[start], left_a[target])
        # forward arcs b -> a gain flow, backward arcs a -> b (into a non-start b) lose it
        backs = [(prev_b[j], j) for _, j in path if prev_b[j] >= 0]
        for i2, j2 in backs:
            push = min(push, x[i2][j2])
        for i2, j2 in path:
            x[i2][j2] += push
        for i2, j2 in backs:
            x[i2][j2] -= push
        left_b[start] -= push
        left_a[target] -= push

    entries = [(i, j, Fraction(x[i][j], den)) for i in range(n_a) for j in range(n_b) if x[i][j]]
    cost = math.fsum(float(m) * inst.cost[i, j] for i, j, m in entries)
    return TransportPlan(entries, cost), cost
