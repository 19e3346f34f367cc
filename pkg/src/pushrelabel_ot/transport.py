"""Optimal transport by reduction to unbalanced matching over vertex copies.

Masses are multiplied by ``theta = 4n/eps``; supplies are rounded down and
demands up, and every vertex becomes that many unit copies.  The copies are
never materialized.  Free supply copies of a vertex are always raised to the
largest dual among its copies, which keeps the copies of any vertex on at
most two neighbouring dual levels.  That is what :class:`ClusterState`
stores:

* demand vertex ``a``: a top level ``top[a]`` holding ``free_a[a]`` free
  copies (only possible when ``top[a] == 0``) plus ``f_hi[a, p]`` copies
  matched to copies of ``p``, and a level ``top[a] - 1`` holding
  ``f_lo[a, p]`` matched copies;
* supply vertex ``b``: ``free_b[b]`` free copies at level ``ymax[b]``; the
  level of a matched copy follows from its partner since matched edges are
  tight (``Y(a) + Y(b) = k(a, b)``).

Within a phase only top-level demand copies can be admissible, and among
them free copies are consumed first, then copies matched to lower-indexed
supply vertices.  :func:`solve_copies_explicit` runs the plain assignment
loop on materialized copies with the same order and must produce the same
flow; it exists for cross-checking on small inputs.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import assignment
from .assignment import SolveStats
from .core import (
    DualState,
    InvariantViolation,
    Matching,
    OTInstance,
    ParameterError,
    ScaledCosts,
    TransportPlan,
    check_eps,
    scale_round_costs,
    AssignmentInstance,
)

MAX_COPIES = 2**40

# Largest target error whose internal matching error still fits: the copy
# matching loses 3*eps' and the rounding repair at most eps'/2.
INTERNAL_EPS_FACTOR = 2.0 / 7.0


@dataclass(frozen=True, eq=False)
class ScaledMasses:
    eps: float
    theta: Fraction
    d: np.ndarray
    s: np.ndarray

    @property
    def total_demand(self) -> int:
        return int(self.d.sum())

    @property
    def total_supply(self) -> int:
        return int(self.s.sum())


def scale_and_round(inst: OTInstance, eps: float) -> ScaledMasses:
    """Copy counts: ``d_a = ceil(mu_a * theta)``, ``s_b = floor(nu_b * theta)``, exactly."""
    eps = check_eps(eps)
    n = max(inst.n_a, inst.n_b)
    theta = Fraction(4 * n) / Fraction(eps)
    d = [math.ceil(m * theta) for m in inst.mu]
    s = [math.floor(v * theta) for v in inst.nu]
    if sum(d) > MAX_COPIES:
        raise ParameterError(f"{sum(d)} demand copies exceed the supported {MAX_COPIES}")
    return ScaledMasses(eps, theta, np.array(d, dtype=np.int64), np.array(s, dtype=np.int64))


class ClusterState:
    """Compressed copy state; see the module docstring for the layout."""

    def __init__(self, sc: ScaledCosts, d: np.ndarray, s: np.ndarray):
        self.sc = sc
        self.k = sc.k
        self.kt = np.ascontiguousarray(sc.k.T)
        self.d = np.asarray(d, dtype=np.int64)
        self.s = np.asarray(s, dtype=np.int64)
        n_a, n_b = sc.k.shape
        self.top = np.zeros(n_a, dtype=np.int64)
        self.free_a = self.d.copy()
        self.f_hi = np.zeros((n_a, n_b), dtype=np.int64)
        self.f_lo = np.zeros((n_a, n_b), dtype=np.int64)
        self.ymax = np.ones(n_b, dtype=np.int64)
        self.free_b = self.s.copy()

    @property
    def n_a(self) -> int:
        return self.k.shape[0]

    @property
    def n_b(self) -> int:
        return self.k.shape[1]

    def copy(self) -> ClusterState:
        out = object.__new__(ClusterState)
        out.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) and k not in ("k", "kt")
                                 else v) for k, v in self.__dict__.items()})
        return out

    def flow(self) -> np.ndarray:
        return self.f_hi + self.f_lo

    def a_clusters(self, a: int) -> list[tuple[int, int, int]]:
        """``(dual, free_count, matched_count)`` per distinct dual level of demand vertex a."""
        out = []
        hi_m = int(self.f_hi[a].sum())
        if self.free_a[a] or hi_m:
            out.append((int(self.top[a]), int(self.free_a[a]), hi_m))
        lo_m = int(self.f_lo[a].sum())
        if lo_m:
            out.append((int(self.top[a]) - 1, 0, lo_m))
        return out

    def b_clusters(self, b: int) -> list[tuple[int, int, int]]:
        """``(dual, free_count, matched_count)`` per distinct dual level of supply vertex b."""
        levels: dict[int, list[int]] = {}
        if self.free_b[b]:
            levels.setdefault(int(self.ymax[b]), [0, 0])[0] += int(self.free_b[b])
        for f, shift in ((self.f_hi, 0), (self.f_lo, 1)):
            col = f[:, b]
            for a in np.flatnonzero(col):
                lvl = int(self.k[a, b] - self.top[a] + shift)
                levels.setdefault(lvl, [0, 0])[1] += int(col[a])
        return sorted(((lvl, fc, mc) for lvl, (fc, mc) in levels.items()), reverse=True)

    def b_level_range(self) -> tuple[np.ndarray, np.ndarray]:
        """Min and max dual over the matched copies of each supply vertex (sentinels if none)."""
        big = np.iinfo(np.int64).max // 4
        hi_lvl = self.k - self.top[:, None]
        lo_lvl = hi_lvl + 1
        mn = np.minimum(np.where(self.f_hi > 0, hi_lvl, big).min(axis=0, initial=big),
                        np.where(self.f_lo > 0, lo_lvl, big).min(axis=0, initial=big))
        mx = np.maximum(np.where(self.f_hi > 0, hi_lvl, -big).max(axis=0, initial=-big),
                        np.where(self.f_lo > 0, lo_lvl, -big).max(axis=0, initial=-big))
        return mn, mx

    def total_magnitude(self) -> int:
        a_part = (np.abs(self.top) * self.f_hi.sum(axis=1)
                  + np.abs(self.top - 1) * self.f_lo.sum(axis=1)).sum()
        b_part = (self.ymax * self.free_b).sum()
        b_part += (np.abs(self.k - self.top[:, None]) * self.f_hi).sum()
        b_part += (np.abs(self.k - self.top[:, None] + 1) * self.f_lo).sum()
        return int(a_part + b_part)

    def max_magnitude(self) -> int:
        mn, mx = self.b_level_range()
        vals = [int(np.abs(self.top).max(initial=0))]
        if np.any(self.f_lo):
            vals.append(int(np.abs(self.top - 1)[self.f_lo.sum(axis=1) > 0].max()))
        has = mx > -(np.iinfo(np.int64).max // 4)
        if np.any(has):
            vals.append(int(np.abs(mx[has]).max()))
            vals.append(int(np.abs(mn[has]).max()))
        if np.any(self.free_b):
            vals.append(int(self.ymax[self.free_b > 0].max()))
        return max(vals)


def check_cluster_invariant(state: ClusterState) -> list[str]:
    """At most two dual levels per vertex, free supply copies on the top level,
    consistent counts, and eps-feasibility of the expanded copies."""
    out: list[str] = []
    k = state.k
    for a in range(state.n_a):
        cl = state.a_clusters(a)
        if len(cl) > 2:
            out.append(f"demand vertex {a} has {len(cl)} dual levels")
        if state.free_a[a] and state.top[a] != 0:
            out.append(f"demand vertex {a} has free copies at level {state.top[a]} != 0")
        if state.top[a] > 0:
            out.append(f"demand vertex {a} has positive dual {state.top[a]}")
        if state.free_a[a] + state.flow()[a].sum() != state.d[a]:
            out.append(f"demand vertex {a}: copy counts do not add up to {state.d[a]}")
    for b in range(state.n_b):
        cl = state.b_clusters(b)
        if len(cl) > 2:
            out.append(f"supply vertex {b} has {len(cl)} distinct duals {[c[0] for c in cl]}")
        if cl and cl[-1][0] < 0:
            out.append(f"supply vertex {b} has negative dual {cl[-1][0]}")
        if state.free_b[b]:
            top = max(c[0] for c in cl)
            if state.ymax[b] < top:
                out.append(f"free copies of supply vertex {b} sit at {state.ymax[b]} below {top}")
        if state.free_b[b] + state.flow()[:, b].sum() != state.s[b]:
            out.append(f"supply vertex {b}: copy counts do not add up to {state.s[b]}")
    # eps-feasibility: the highest demand level against the highest supply level.
    # Any pair with Y(a) + Y(b) > k + 1 cannot be a matched (tight) pair, so one
    # such level pair is already a violated copy edge.
    mn, mx = state.b_level_range()
    b_top = np.where(state.free_b > 0, np.maximum(state.ymax, mx), mx)
    has_b = (state.free_b > 0) | (state.flow().sum(axis=0) > 0)
    bad = (state.top[:, None] + b_top[None, :] > k + 1) & has_b[None, :] & (state.d > 0)[:, None]
    for a, b in zip(*np.nonzero(bad)):
        out.append(f"copies of ({a},{b}) violate feasibility: {state.top[a]} + {b_top[b]} > {k[a, b] + 1}")
        if len(out) > 50:
            break
    return out


def expand_clusters(state: ClusterState) -> tuple[ScaledCosts, DualState, Matching,
                                                   np.ndarray, np.ndarray]:
    """Materialize the copies: costs, duals and matching on the copy graph plus owner maps."""
    owner_a = np.repeat(np.arange(state.n_a), state.d)
    owner_b = np.repeat(np.arange(state.n_b), state.s)
    sc = ScaledCosts(state.sc.eps, state.k[owner_a][:, owner_b])
    m = Matching.empty(owner_a.size, owner_b.size)
    ya = np.zeros(owner_a.size, dtype=np.int64)
    yb = np.zeros(owner_b.size, dtype=np.int64)
    a_next = np.r_[0, np.cumsum(state.d)[:-1]].astype(np.int64)
    b_next = np.r_[0, np.cumsum(state.s)[:-1]].astype(np.int64)
    for a in range(state.n_a):
        for f, lvl in ((state.f_hi, state.top[a]), (state.f_lo, state.top[a] - 1)):
            for b in np.flatnonzero(f[a]):
                for _ in range(f[a, b]):
                    i, j = a_next[a], b_next[b]
                    a_next[a] += 1
                    b_next[b] += 1
                    m.match_a[i], m.match_b[j] = j, i
                    ya[i] = lvl
                    yb[j] = state.k[a, b] - lvl
        ya[a_next[a]:a_next[a] + state.free_a[a]] = 0
    for b in range(state.n_b):
        yb[b_next[b]:b_next[b] + state.free_b[b]] = state.ymax[b]
    return sc, DualState(ya, yb), m, owner_a, owner_b


def _greedy(state: ClusterState, threads: int) -> tuple[np.ndarray, np.ndarray]:
    """Bulk greedy step.  Returns ``T[a, b]`` copies matched in M' and per-a totals."""
    top, ymax, kt = state.top, state.ymax, state.kt
    avail = state.free_a + state.f_hi.sum(axis=1)
    taken = np.zeros(state.n_a, dtype=np.int64)
    T = np.zeros((state.n_a, state.n_b), dtype=np.int64)
    bs = np.flatnonzero(state.free_b > 0)

    def take(b, lock=None):
        adm = np.flatnonzero((kt[b] + 1 - ymax[b] == top) & (avail > taken))
        if adm.size == 0:
            return
        need = state.free_b[b]
        if lock is None:
            cap = avail[adm] - taken[adm]
            t = np.clip(need - (np.cumsum(cap) - cap), 0, cap)
            T[adm, b] = t
            taken[adm] += t
            return
        for a in adm:
            with lock:
                got = min(need, avail[a] - taken[a])
                if got > 0:
                    taken[a] += got
                    T[a, b] += got
                    need -= got
            if need == 0:
                break

    if threads <= 1 or bs.size < 2:
        for b in bs:
            take(b)
    else:
        lock = threading.Lock()
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda chunk: [take(b, lock) for b in chunk],
                          [bs[i::threads] for i in range(threads)]))
    return T, taken


def cluster_phase(state: ClusterState, stats: SolveStats, *, verify: bool = False,
                  threads: int = 1) -> None:
    """One greedy / push / relabel phase on the compressed copies, in place."""
    n_free = int(state.free_b.sum())
    if verify:
        before_free_a = state.free_a.copy()
        before_mag = state.total_magnitude()
        before_top, before_ymax = state.top.copy(), state.ymax.copy()
        before_free_b = state.free_b.copy()
        avail = state.free_a + state.f_hi.sum(axis=1)
    bs = np.flatnonzero(state.free_b > 0)
    T, taken = _greedy(state, threads)

    # push: consume free copies first, then copies matched to lower-indexed b
    freed = np.zeros(state.n_b, dtype=np.int64)
    for a in np.flatnonzero(taken):
        t = int(taken[a])
        u = min(t, int(state.free_a[a]))
        state.free_a[a] -= u
        t -= u
        if t:
            row = state.f_hi[a]
            use = np.clip(t - (np.cumsum(row) - row), 0, row)
            row -= use
            freed += use

    # relabel: matched-in-M' demand copies drop one level
    state.f_lo += T
    emptied = np.flatnonzero((taken > 0) & (state.free_a == 0) & (state.f_hi.sum(axis=1) == 0))
    if emptied.size:
        state.top[emptied] -= 1
        state.f_hi[emptied] = state.f_lo[emptied]
        state.f_lo[emptied] = 0
    state.free_b -= T.sum(axis=0)
    state.ymax[bs[state.free_b[bs] > 0]] += 1
    # freed supply copies join the free pool at the vertex's top level
    state.free_b += freed

    mn, mx = state.b_level_range()
    has = state.flow().sum(axis=0) > 0
    spread = np.where(has, state.ymax - mn, 0)
    if np.any(spread > 1) or np.any(has & (mx > state.ymax)):
        bad = np.flatnonzero((spread > 1) | (has & (mx > state.ymax)))
        raise InvariantViolation([f"supply vertex {b} needs a third dual level" for b in bad[:5]])

    stats.phases += 1
    stats.free_counts.append(n_free)
    if verify:
        tag = f"phase {stats.phases}: "
        bad = []
        for b in bs:
            if before_free_b[b] > T[:, b].sum():
                adm = (state.kt[b] + 1 - before_ymax[b] == before_top) & (avail > taken)
                if np.any(adm):
                    bad.append(f"M' not maximal at supply vertex {b}")
        if np.any(state.free_a > before_free_a):
            bad.append("a matched demand copy became free")
        gain = state.total_magnitude() - before_mag
        if gain < n_free:
            bad.append(f"dual magnitude grew by {gain} < n_i={n_free}")
        if state.max_magnitude() > state.sc.dual_bound:
            bad.append(f"dual magnitude above {state.sc.dual_bound}")
        cv = check_cluster_invariant(state)
        stats.info["cluster_checks"] = stats.info.get("cluster_checks", 0) + 1
        stats.info["cluster_violations"] = stats.info.get("cluster_violations", 0) + len(cv)
        bad += cv
        stats.violations.extend(tag + v for v in bad)


def complete_clusters(state: ClusterState) -> int:
    """Pair leftover free supply copies with free demand copies, both in ascending vertex order."""
    fa = state.free_a.copy()
    moved = 0
    ai = 0
    for b in np.flatnonzero(state.free_b > 0):
        need = int(state.free_b[b])
        while need:
            while fa[ai] == 0:
                ai += 1
            t = min(need, int(fa[ai]))
            state.f_hi[ai, b] += t
            fa[ai] -= t
            need -= t
            moved += t
        state.free_b[b] = 0
    state.free_a = fa
    return moved


def solve_copies(sc: ScaledCosts, d, s, *, verify: bool = False,
                 threads: int = 1) -> tuple[np.ndarray, SolveStats, ClusterState]:
    """Run the matching loop on the implicit copy instance; returns the integer flow f(a, b)."""
    d = np.asarray(d, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    if d.sum() < s.sum():
        raise ParameterError(f"demand copies {d.sum()} fewer than supply copies {s.sum()}")
    state = ClusterState(sc, d, s)
    total = int(s.sum())
    stats = SolveStats(eps=sc.eps, n=total)
    limit = sc.eps * total
    while state.free_b.sum() > limit:
        cluster_phase(state, stats, verify=verify, threads=threads)
        if stats.phases > 4 * stats.phase_bound + 10:
            raise InvariantViolation([f"no termination after {stats.phases} phases"])
    stats.duals_final = DualState(state.top.copy(), state.ymax.copy())
    snapshot = state.copy()
    stats.completed = complete_clusters(state)
    stats.info["final_state"] = snapshot
    return state.flow(), stats, state


def solve_copies_explicit(sc: ScaledCosts, d, s, *,
                          verify: bool = False) -> tuple[np.ndarray, SolveStats]:
    """Reference: the assignment phase loop on materialized copies, with the same scan order."""
    d = np.asarray(d, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    owner_a = np.repeat(np.arange(sc.n_a), d)
    owner_b = np.repeat(np.arange(sc.n_b), s)
    csc = ScaledCosts(sc.eps, sc.k[owner_a][:, owner_b])
    m, dual = assignment.init_state(csc)
    stats = SolveStats(eps=sc.eps, n=int(s.sum()))
    stride = sc.n_b + 1
    starts = np.r_[0, np.cumsum(s)[:-1]][s > 0]

    def priority(mm: Matching) -> np.ndarray:
        partner = np.where(mm.match_a >= 0, 1 + owner_b[np.maximum(mm.match_a, 0)], 0)
        return owner_a * stride + partner

    def lift(mm: Matching, dd: DualState) -> None:
        if owner_b.size == 0:
            return
        top = np.maximum.reduceat(dd.yb, starts)
        per_copy = np.repeat(top, s[s > 0])
        free = mm.match_b < 0
        dd.yb[free] = per_copy[free]

    assignment.run_phases(csc, m, dual, stats, verify=verify, a_priority=priority,
                          after_phase=lift)
    m = assignment.complete_matching(m)
    flow = np.zeros((sc.n_a, sc.n_b), dtype=np.int64)
    rows = np.flatnonzero(m.match_a >= 0)
    np.add.at(flow, (owner_a[rows], owner_b[m.match_a[rows]]), 1)
    return flow, stats


def plan_from_flow(flow: np.ndarray, sm: ScaledMasses, inst: OTInstance) -> TransportPlan:
    """Turn copy flow into an exact plan that ships every supply completely.

    Flow is divided by theta.  Demand vertices that received more than their
    mass (demands were rounded up) give the excess back from their most
    expensive edges; then all unshipped supply goes to demand vertices with
    spare capacity, both sides in ascending index order.
    """
    flow = np.asarray(flow)
    if np.any(flow.sum(axis=0) > sm.s) or np.any(flow.sum(axis=1) > sm.d):
        raise ParameterError("flow exceeds the copy counts")
    n_a, n_b = flow.shape
    sigma: dict[tuple[int, int], Fraction] = {}
    for a, b in zip(*np.nonzero(flow)):
        sigma[(int(a), int(b))] = Fraction(int(flow[a, b])) / sm.theta

    cost = inst.cost
    for a in range(n_a):
        keys = sorted((key for key in sigma if key[0] == a), key=lambda kb: (-cost[kb], kb[1]))
        excess = sum(sigma[key] for key in keys) - inst.mu[a]
        for key in keys:
            if excess <= 0:
                break
            cut = min(excess, sigma[key])
            sigma[key] -= cut
            excess -= cut
            if sigma[key] == 0:
                del sigma[key]

    shipped_b = [Fraction(0)] * n_b
    shipped_a = [Fraction(0)] * n_a
    for (a, b), m in sigma.items():
        shipped_b[b] += m
        shipped_a[a] += m
    spare = [inst.mu[a] - shipped_a[a] for a in range(n_a)]
    ai = 0
    for b in range(n_b):
        need = inst.nu[b] - shipped_b[b]
        while need > 0:
            while ai < n_a and spare[ai] <= 0:
                ai += 1
            if ai == n_a:
                raise InvariantViolation([f"no spare demand left for residual supply of {b}"])
            t = min(need, spare[ai])
            sigma[(ai, b)] = sigma.get((ai, b), Fraction(0)) + t
            spare[ai] -= t
            need -= t

    entries = [(a, b, m) for (a, b), m in sorted(sigma.items()) if m > 0]
    total = float(sum(float(m) * cost[a, b] for a, b, m in entries))
    return TransportPlan(entries, total)


def solve_ot(inst: OTInstance, eps: float, *, verify: bool = False, threads: int = 1,
             internal_eps: float | None = None) -> tuple[TransportPlan, SolveStats]:
    """Complete transport plan with cost at most the optimum plus ``eps``.

    The matching runs with ``internal_eps`` (default ``2*eps/7``) so that its
    3*eps' error and the at most eps'/2 lost to mass rounding add up to eps.
    """
    eps = check_eps(eps)
    inner = check_eps(eps * INTERNAL_EPS_FACTOR if internal_eps is None else internal_eps)
    sm = scale_and_round(inst, inner)
    sc = scale_round_costs(AssignmentInstance(inst.cost), inner)
    flow, stats, _ = solve_copies(sc, sm.d, sm.s, verify=verify, threads=threads)
    plan = plan_from_flow(flow, sm, inst)
    stats.info.update(theta=sm.theta, internal_eps=inner, supply_copies=sm.total_supply,
                      demand_copies=sm.total_demand)
    return plan, stats
