"""Push-relabel phase algorithm for (possibly unbalanced) bipartite assignment.

Each phase takes the free supply vertices B', builds the admissible edges
E' incident on them, greedily computes a maximal matching M' on E', swaps
M' into the matching (push) and moves the duals by one unit (relabel).
The loop stops once at most ``eps * min(n_a, n_b)`` supply vertices are free,
and the leftovers are matched arbitrarily.

Orientation: the B side is always the smaller side.  ``solve`` transposes
the instance when ``n_b > n_a`` and maps the result back.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    AssignmentInstance,
    DualState,
    InvariantViolation,
    Matching,
    ParameterError,
    ScaledCosts,
    check_eps,
    scale_round_costs,
)

_EMPTY = np.zeros(0, dtype=np.int64)
_MAX_REPORTED = 50


@dataclass
class PhaseWorkset:
    """Everything one phase touches.

    ``edges_b``/``edges_a`` list E' grouped by supply vertex, in the order
    the greedy step scans them.  The last three fields are filled in by
    :func:`greedy_maximal_matching` and :func:`apply_phase`.
    """

    n_a: int
    n_b: int
    b_free: np.ndarray
    edges_b: np.ndarray
    edges_a: np.ndarray
    a_touched: np.ndarray
    m_prime: Matching | None = None
    a_double: np.ndarray = field(default_factory=lambda: _EMPTY)
    m_double: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class SolveStats:
    eps: float
    n: int
    phases: int = 0
    free_counts: list[int] = field(default_factory=list)
    duals_final: DualState | None = None
    violations: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    swapped: bool = False
    completed: int = 0
    info: dict = field(default_factory=dict)

    @property
    def sum_ni(self) -> int:
        return sum(self.free_counts)

    @property
    def phase_bound(self) -> int:
        return math.ceil((1 + 2 * self.eps) / self.eps**2)

    @property
    def sum_ni_bound(self) -> int:
        return math.ceil(self.n * (1 + 2 * self.eps) / self.eps)

    def bound_violations(self) -> list[str]:
        out = []
        if self.phases > self.phase_bound:
            out.append(f"phase count {self.phases} exceeds bound {self.phase_bound}")
        if self.sum_ni > self.sum_ni_bound:
            out.append(f"sum of free counts {self.sum_ni} exceeds bound {self.sum_ni_bound}")
        return out


def init_state(sc: ScaledCosts) -> tuple[Matching, DualState]:
    m = Matching.empty(sc.n_a, sc.n_b)
    d = DualState(np.zeros(sc.n_a, dtype=np.int64), np.ones(sc.n_b, dtype=np.int64))
    return m, d


def collect_workset(sc: ScaledCosts, d: DualState, m: Matching,
                    a_priority: np.ndarray | None = None) -> PhaseWorkset:
    """Gather B' and its admissible edges.

    Admissible neighbours of each b are listed by ascending A index, or by
    ascending ``(a_priority[a], a)`` when a priority vector is given.
    """
    b_free = np.flatnonzero(m.match_b < 0)
    if b_free.size == 0:
        return PhaseWorkset(sc.n_a, sc.n_b, b_free, _EMPTY, _EMPTY, _EMPTY)
    # b is free, so every edge at b is off the matching: admissible iff Y(a) + Y(b) = k + 1
    target = _kt(sc)[b_free] + (1 - d.yb[b_free])[:, None]
    rows, ea = np.nonzero(target == d.ya[None, :])
    if a_priority is not None and rows.size:
        order = np.lexsort((ea, a_priority[ea], rows))
        rows, ea = rows[order], ea[order]
    return PhaseWorkset(sc.n_a, sc.n_b, b_free, b_free[rows], ea, np.unique(ea))


def _kt(sc: ScaledCosts) -> np.ndarray:
    kt = sc.__dict__.get("_kt")
    if kt is None:
        kt = np.ascontiguousarray(sc.k.T)
        sc.__dict__["_kt"] = kt
    return kt


def _segments(ws: PhaseWorkset):
    if ws.edges_b.size == 0:
        return []
    starts = np.flatnonzero(np.r_[True, ws.edges_b[1:] != ws.edges_b[:-1]])
    ends = np.r_[starts[1:], ws.edges_b.size]
    return [(int(ws.edges_b[s]), ws.edges_a[s:e]) for s, e in zip(starts, ends)]


def greedy_maximal_matching(ws: PhaseWorkset, threads: int = 1) -> Matching:
    """Maximal matching on (A' u B', E').

    Sequentially, each b of B' in ascending order takes its first admissible
    neighbour not yet taken.  With ``threads > 1`` B' is split across workers
    that claim A vertices under a lock; the result is still maximal but the
    pairing may differ between runs.
    """
    mp = Matching.empty(ws.n_a, ws.n_b)
    segs = _segments(ws)
    if threads <= 1 or len(segs) < 2:
        taken = np.zeros(ws.n_a, dtype=bool)
        for b, cand in segs:
            free = cand[~taken[cand]]
            if free.size:
                a = free[0]
                taken[a] = True
                mp.match_a[a] = b
                mp.match_b[b] = a
        return mp

    lock = threading.Lock()

    def work(chunk):
        got = []
        for b, cand in chunk:
            for a in cand:
                with lock:
                    if mp.match_a[a] < 0:
                        mp.match_a[a] = b
                        mp.match_b[b] = a
                        got.append(b)
                        break
        return got

    chunks = [segs[i::threads] for i in range(threads)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(work, chunks))
    return mp


def apply_phase(sc: ScaledCosts, d: DualState, m: Matching, ws: PhaseWorkset,
                check: bool = False) -> tuple[Matching, DualState]:
    """Push M' into M, dropping the M-edges of doubly matched A vertices, then relabel.

    Mutates ``m`` and ``d`` in place and returns them.  With ``check`` the
    post-state is verified and :class:`InvariantViolation` raised on failure.
    """
    if ws.m_prime is None:
        raise ParameterError("workset has no greedy matching; run greedy_maximal_matching first")
    mp = ws.m_prime
    mp_a = np.flatnonzero(mp.match_a >= 0)
    mp_b = mp.match_a[mp_a]
    old_b = m.match_a[mp_a]
    dbl = old_b >= 0
    ws.a_double = mp_a[dbl]
    ws.m_double = list(zip(ws.a_double.tolist(), old_b[dbl].tolist()))

    m.match_b[old_b[dbl]] = -1
    m.match_a[mp_a] = mp_b
    m.match_b[mp_b] = mp_a

    d.ya[mp_a] -= 1
    d.yb[ws.b_free[mp.match_b[ws.b_free] < 0]] += 1

    if check:
        bad = verify_feasibility(sc, d, m)
        if bad:
            raise InvariantViolation(bad)
    return m, d


def verify_feasibility(sc: ScaledCosts, d: DualState, m: Matching) -> list[str]:
    """All eps-feasibility and sign conditions, checked over every edge.  Empty list = pass."""
    out: list[str] = []

    def report(msg):
        if len(out) < _MAX_REPORTED:
            out.append(msg)

    if not m.is_consistent():
        report("matching arrays are not mutually consistent")
        return out
    ya, yb, k = d.ya, d.yb, sc.k
    for a in np.flatnonzero(ya > 0)[:5]:
        report(f"Y(a={a})={ya[a]} > 0")
    for b in np.flatnonzero(yb < 0)[:5]:
        report(f"Y(b={b})={yb[b]} < 0")
    for a in np.flatnonzero((m.match_a < 0) & (ya != 0))[:5]:
        report(f"free a={a} has Y={ya[a]} != 0")
    bound = sc.dual_bound
    if ya.size and np.abs(ya).max() > bound or yb.size and np.abs(yb).max() > bound:
        report(f"dual magnitude exceeds {bound}")

    rows = np.flatnonzero(m.match_a >= 0)
    cols = m.match_a[rows]
    on = ya[rows] + yb[cols]
    for i in np.flatnonzero(on != k[rows, cols])[:5]:
        a, b = rows[i], cols[i]
        report(f"matched ({a},{b}): Y(a)+Y(b)={on[i]} != k={k[a, b]}")

    step = max(1, 2**22 // max(1, sc.n_b))
    for lo in range(0, sc.n_a, step):
        hi = min(sc.n_a, lo + step)
        s = ya[lo:hi, None] + yb[None, :]
        viol = s > k[lo:hi] + 1
        mr = np.flatnonzero(m.match_a[lo:hi] >= 0)
        viol[mr, m.match_a[lo:hi][mr]] = False
        for i, j in zip(*np.nonzero(viol)):
            report(f"edge ({lo + i},{j}): Y(a)+Y(b)={s[i, j]} > k+1={k[lo + i, j] + 1}")
            if len(out) >= _MAX_REPORTED:
                break
    return out


def check_maximal(ws: PhaseWorkset) -> list[str]:
    """Every edge of E' must have an endpoint matched in M'."""
    mp = ws.m_prime
    if mp is None or ws.edges_a.size == 0:
        return []
    open_edge = (mp.match_a[ws.edges_a] < 0) & (mp.match_b[ws.edges_b] < 0)
    idx = np.flatnonzero(open_edge)
    out = [f"M' not maximal: edge ({ws.edges_a[i]},{ws.edges_b[i]}) has both ends free"
           for i in idx[:5]]
    e_pairs = set(zip(ws.edges_a.tolist(), ws.edges_b.tolist()))
    for pair in mp.pairs():
        if pair not in e_pairs:
            out.append(f"M' edge {pair} is not in E'")
            break
    return out


def complete_matching(m: Matching) -> Matching:
    """Pair the i-th free vertex of the smaller side with the i-th free vertex of the other side."""
    out = m.copy()
    fa = np.flatnonzero(out.match_a < 0)
    fb = np.flatnonzero(out.match_b < 0)
    r = min(fa.size, fb.size)
    fa, fb = fa[:r], fb[:r]
    out.match_a[fa] = fb
    out.match_b[fb] = fa
    return out


def run_phases(sc: ScaledCosts, m: Matching, d: DualState, stats: SolveStats, *,
               verify: bool = False, threads: int = 1,
               a_priority: Callable[[Matching], np.ndarray] | None = None,
               after_phase: Callable[[Matching, DualState], None] | None = None) -> None:
    """Main phase loop; leaves the final (incomplete) matching in ``m``.

    ``a_priority`` maps the current matching to a scan-order key per A vertex
    and ``after_phase`` may post-process the state; both exist so that copy
    instances of transport problems can reuse this loop.
    """
    limit = sc.eps * min(sc.n_a, sc.n_b)
    bound = sc.dual_bound
    while True:
        n_free = int(np.count_nonzero(m.match_b < 0))
        if n_free <= limit:
            break
        if verify:
            before_matched = np.flatnonzero(m.match_a >= 0)
            before_mag = d.total_magnitude()
        ws = collect_workset(sc, d, m, None if a_priority is None else a_priority(m))
        ws.m_prime = greedy_maximal_matching(ws, threads)
        apply_phase(sc, d, m, ws)
        if after_phase is not None:
            after_phase(m, d)
        stats.phases += 1
        stats.free_counts.append(n_free)
        if verify:
            tag = f"phase {stats.phases}: "
            bad = check_maximal(ws) + verify_feasibility(sc, d, m)
            if np.any(m.match_a[before_matched] < 0):
                bad.append("a matched A vertex became free")
            gain = d.total_magnitude() - before_mag
            if gain < n_free:
                bad.append(f"dual magnitude grew by {gain} < n_i={n_free}")
            if max(np.abs(d.ya).max(initial=0), np.abs(d.yb).max(initial=0)) > bound:
                bad.append(f"dual magnitude above {bound}")
            stats.violations.extend(tag + v for v in bad)
        if stats.phases > 4 * stats.phase_bound + 10:
            raise InvariantViolation([f"phase loop did not terminate after {stats.phases} phases"])
    if not np.any(m.match_a < 0):
        stats.notes.append("every A vertex matched at termination; dual bound argument degenerate")


def solve(inst: AssignmentInstance, eps: float, *, verify: bool = False,
          threads: int = 1) -> tuple[Matching, SolveStats]:
    """Approximate min-cost matching of cardinality ``min(n_a, n_b)``.

    The returned cost is within ``3 * eps * min(n_a, n_b)`` of optimal.
    With ``verify`` every phase is checked and problems collected in
    ``stats.violations`` (the solve itself never raises on them).
    """
    eps = check_eps(eps)
    if threads < 1:
        raise ParameterError(f"threads must be >= 1, got {threads}")
    swapped = inst.n_b > inst.n_a
    work = AssignmentInstance(inst.cost.T) if swapped else inst
    sc = scale_round_costs(work, eps)
    m, d = init_state(sc)
    stats = SolveStats(eps=eps, n=min(inst.n_a, inst.n_b), swapped=swapped)
    run_phases(sc, m, d, stats, verify=verify, threads=threads)
    before = len(m)
    m = complete_matching(m)
    stats.completed = len(m) - before
    stats.duals_final = d.copy()
    if swapped:
        m = Matching(m.match_b, m.match_a)
    return m, stats
