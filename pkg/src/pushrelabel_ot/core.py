"""Shared data model: instances, integer-unit costs and duals, matchings, plans.

Every quantity that enters a feasibility decision is stored as an exact
integer in units of ``eps``.  Real arithmetic is only used for the original
costs and for reported plan costs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np

# Floor/ceil of c/eps are snapped to the nearest integer when within this
# distance, so that decimal inputs like c=0.3, eps=0.1 round as written.
ROUND_SNAP = 1e-9

# Largest admissible 1/eps.  Keeps dual magnitudes far inside int64.
MAX_INV_EPS = 2**40

MASS_TOL = 1e-9
MASS_DENOMINATOR = 10**9


class ParameterError(ValueError):
    """An argument is outside its admissible range."""


class InputFormatError(ValueError):
    """A file or instance does not have the expected layout."""


class NumericalError(ArithmeticError):
    """A floating point computation broke down (underflow, NaN)."""


class InvariantViolation(AssertionError):
    """A checked solver invariant does not hold."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        head = "; ".join(self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"{len(self.violations)} invariant violation(s): {head}{more}")


def check_eps(eps: float) -> float:
    eps = float(eps)
    if not (0.0 < eps < 1.0) or math.isnan(eps):
        raise ParameterError(f"eps must lie in (0, 1), got {eps!r}")
    if 1.0 / eps > MAX_INV_EPS:
        raise ParameterError(f"eps={eps!r} is too small: 1/eps exceeds {MAX_INV_EPS}")
    return eps


def snapped_floor(x: np.ndarray | float) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + ROUND_SNAP).astype(np.int64)


@dataclass(frozen=True, eq=False)
class AssignmentInstance:
    """Complete bipartite cost matrix, rows are demand vertices A, columns supply vertices B.

    ``scale`` is the factor the costs were divided by to land in [0, 1];
    multiply a reported cost by it to get back to the raw units.
    """

    cost: np.ndarray
    scale: float = 1.0
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        cost = np.ascontiguousarray(self.cost, dtype=np.float64)
        if cost.ndim != 2 or cost.shape[0] < 1 or cost.shape[1] < 1:
            raise ParameterError(f"cost must be a non-empty 2-d matrix, got shape {cost.shape}")
        if not np.all(np.isfinite(cost)):
            raise ParameterError("cost matrix contains non-finite entries")
        if cost.min() < 0.0 or cost.max() > 1.0:
            raise ParameterError(
                f"costs must lie in [0, 1], got range [{cost.min()}, {cost.max()}]")
        cost.setflags(write=False)
        object.__setattr__(self, "cost", cost)

    @property
    def n_a(self) -> int:
        return self.cost.shape[0]

    @property
    def n_b(self) -> int:
        return self.cost.shape[1]


@dataclass(frozen=True, eq=False)
class ScaledCosts:
    eps: float
    k: np.ndarray

    @property
    def n_a(self) -> int:
        return self.k.shape[0]

    @property
    def n_b(self) -> int:
        return self.k.shape[1]

    @property
    def dual_bound(self) -> int:
        """Integer form of the 1 + 2*eps bound on any dual magnitude."""
        return math.ceil(1.0 / self.eps - ROUND_SNAP) + 2


@dataclass
class DualState:
    """Duals in units of eps: ``ya <= 0`` on A, ``yb >= 0`` on B."""

    ya: np.ndarray
    yb: np.ndarray

    def copy(self) -> DualState:
        return DualState(self.ya.copy(), self.yb.copy())

    def total_magnitude(self) -> int:
        return int(np.abs(self.ya).sum() + np.abs(self.yb).sum())


@dataclass
class Matching:
    """Partial injective map between A and B; ``-1`` marks a free vertex."""

    match_a: np.ndarray
    match_b: np.ndarray

    @classmethod
    def empty(cls, n_a: int, n_b: int) -> Matching:
        return cls(np.full(n_a, -1, dtype=np.int64), np.full(n_b, -1, dtype=np.int64))

    @classmethod
    def from_pairs(cls, n_a: int, n_b: int, pairs) -> Matching:
        m = cls.empty(n_a, n_b)
        for a, b in pairs:
            if m.match_a[a] >= 0 or m.match_b[b] >= 0:
                raise ParameterError(f"pair ({a}, {b}) reuses a matched vertex")
            m.match_a[a] = b
            m.match_b[b] = a
        return m

    def copy(self) -> Matching:
        return Matching(self.match_a.copy(), self.match_b.copy())

    def __len__(self) -> int:
        return int(np.count_nonzero(self.match_a >= 0))

    def pairs(self) -> list[tuple[int, int]]:
        rows = np.flatnonzero(self.match_a >= 0)
        return [(int(a), int(self.match_a[a])) for a in rows]

    def is_consistent(self) -> bool:
        ra = np.flatnonzero(self.match_a >= 0)
        rb = np.flatnonzero(self.match_b >= 0)
        if ra.size != rb.size:
            return False
        return bool(np.all(self.match_b[self.match_a[ra]] == ra))


@dataclass(frozen=True)
class TransportPlan:
    """Sparse plan: ``entries`` holds ``(a, b, mass)`` with mass > 0.

    Masses are :class:`fractions.Fraction` when produced by the combinatorial
    solver (marginals are then exact) and floats for the Sinkhorn baseline.
    """

    entries: list[tuple[int, int, Any]]
    cost: float

    def dense(self, n_a: int, n_b: int) -> np.ndarray:
        out = np.zeros((n_a, n_b))
        for a, b, m in self.entries:
            out[a, b] += float(m)
        return out

    def supply_marginals(self, n_b: int) -> list:
        out: list = [0] * n_b
        for _, b, m in self.entries:
            out[b] += m
        return out

    def demand_marginals(self, n_a: int) -> list:
        out: list = [0] * n_a
        for a, _, m in self.entries:
            out[a] += m
        return out


def rationalize(values, what: str) -> list[Fraction]:
    """Snap masses to rationals with bounded denominator, renormalized to sum to 1."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ParameterError(f"{what} must be a non-empty vector")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ParameterError(f"{what} must be finite and nonnegative")
    if abs(arr.sum() - 1.0) > MASS_TOL:
        raise ParameterError(f"{what} sums to {arr.sum()!r}, expected 1")
    fr = []
    for v in values:
        if isinstance(v, Fraction):
            fr.append(v)
        else:
            fr.append(Fraction(float(v)).limit_denominator(MASS_DENOMINATOR))
    total = sum(fr)
    if total != 1:
        fr = [x / total for x in fr]
    return fr


@dataclass(frozen=True, eq=False)
class OTInstance:
    """Discrete OT instance: demands ``mu`` on A (rows), supplies ``nu`` on B (columns).

    Masses are kept both as exact fractions summing to exactly 1 and as
    float arrays for numeric solvers.
    """

    cost: np.ndarray
    mu: tuple
    nu: tuple

    def __init__(self, cost, mu, nu):
        c = AssignmentInstance(cost).cost
        mu_f = rationalize(mu, "mu")
        nu_f = rationalize(nu, "nu")
        if len(mu_f) != c.shape[0] or len(nu_f) != c.shape[1]:
            raise ParameterError(
                f"mass vectors of length {len(mu_f)}, {len(nu_f)} do not fit cost shape {c.shape}")
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "mu", tuple(mu_f))
        object.__setattr__(self, "nu", tuple(nu_f))

    @property
    def n_a(self) -> int:
        return self.cost.shape[0]

    @property
    def n_b(self) -> int:
        return self.cost.shape[1]

    @property
    def mu_array(self) -> np.ndarray:
        return np.array([float(x) for x in self.mu])

    @property
    def nu_array(self) -> np.ndarray:
        return np.array([float(x) for x in self.nu])


def scale_round_costs(inst: AssignmentInstance, eps: float) -> ScaledCosts:
    """Round every cost down to a multiple of eps, stored as the integer multiplier."""
    eps = check_eps(eps)
    k = snapped_floor(inst.cost / eps)
    k = np.minimum(k, snapped_floor(1.0 / eps))
    k.setflags(write=False)
    return ScaledCosts(eps, k)


def slack(sc: ScaledCosts, d: DualState, m: Matching, a: int, b: int) -> int:
    """Integer slack with the +eps allowance folded in.

    Zero on matching edges.  Off the matching it is ``k + 1 - Y(a) - Y(b)``,
    so an edge is admissible exactly when this returns 0.
    """
    if not (0 <= a < sc.n_a and 0 <= b < sc.n_b):
        raise IndexError(f"edge ({a}, {b}) out of range for {sc.k.shape}")
    if m.match_a[a] == b:
        return 0
    return int(sc.k[a, b]) + 1 - int(d.ya[a]) - int(d.yb[b])


def matching_cost(m: Matching, inst: AssignmentInstance) -> float:
    rows = np.flatnonzero(m.match_a >= 0)
    if rows.size == 0:
        return 0.0
    return float(inst.cost[rows, m.match_a[rows]].sum())
