"""Entropically regularized OT by alternating matrix scaling (comparison baseline).

Deliberately not log-stabilized: when ``reg`` is small the kernel underflows
and :class:`NumericalError` is raised instead of returning NaNs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import NumericalError, OTInstance, ParameterError, TransportPlan


@dataclass(frozen=True)
class SinkhornConfig:
    reg: float
    max_iters: int = 10_000
    tol: float = 1e-6
    check_every: int = 10

    def __post_init__(self):
        if not self.reg > 0:
            raise ParameterError(f"reg must be positive, got {self.reg!r}")
        if not self.tol > 0:
            raise ParameterError(f"tol must be positive, got {self.tol!r}")
        if self.max_iters < 1:
            raise ParameterError("max_iters must be at least 1")


def reg_for_eps(eps: float, n: int) -> float:
    """Regularization matched to a target additive error: eps / (4 ln n)."""
    return eps / (4.0 * math.log(max(n, 2)))


def round_to_marginals(P: np.ndarray, mu: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Scale rows and columns down to fit the marginals, then ship what is left
    greedily in index order.  The result has marginals mu and nu."""
    P = P.copy()
    rs = P.sum(axis=1)
    P *= np.minimum(1.0, np.divide(mu, rs, out=np.ones_like(mu), where=rs > 0))[:, None]
    cs = P.sum(axis=0)
    P *= np.minimum(1.0, np.divide(nu, cs, out=np.ones_like(nu), where=cs > 0))[None, :]
    r = np.maximum(mu - P.sum(axis=1), 0.0)
    c = np.maximum(nu - P.sum(axis=0), 0.0)
    i = j = 0
    n_a, n_b = P.shape
    while i < n_a and j < n_b:
        t = min(r[i], c[j])
        P[i, j] += t
        r[i] -= t
        c[j] -= t
        if r[i] <= c[j]:
            i += 1
        else:
            j += 1
    return P


def sinkhorn(inst: OTInstance, cfg: SinkhornConfig) -> tuple[TransportPlan, int, float]:
    """Returns the rounded plan, the number of scaling iterations and the plan cost."""
    mu, nu, C = inst.mu_array, inst.nu_array, inst.cost
    with np.errstate(under="ignore"):
        K = np.exp(-C / cfg.reg)
    if np.any(K.sum(axis=1) == 0) or np.any(K.sum(axis=0) == 0):
        raise NumericalError(f"regularization too small: kernel underflows at reg={cfg.reg:g}")
    u = np.ones_like(mu)
    v = np.ones_like(nu)
    it = 0
    with np.errstate(divide="ignore", over="ignore", invalid="ignore", under="ignore"):
        for it in range(1, cfg.max_iters + 1):
            u = mu / (K @ v)
            v = nu / (K.T @ u)
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise NumericalError(
                    f"regularization too small: scaling vectors overflow at reg={cfg.reg:g}")
            if it % cfg.check_every == 0 or it == cfg.max_iters:
                # columns are exact right after the v update; rows carry the error
                if np.abs(u * (K @ v) - mu).sum() <= cfg.tol:
                    break
        P = u[:, None] * K * v[None, :]
    if not np.all(np.isfinite(P)):
        raise NumericalError(f"regularization too small: plan is not finite at reg={cfg.reg:g}")
    P = round_to_marginals(P, mu, nu)
    a_idx, b_idx = np.nonzero(P > 0)
    entries = [(int(a), int(b), float(P[a, b])) for a, b in zip(a_idx, b_idx)]
    cost = float((P * C).sum())
    return TransportPlan(entries, cost), it, cost
