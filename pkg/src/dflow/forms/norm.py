"""Luxemburg norm of the Dirichlet space ``D`` of a form."""

from __future__ import annotations

import math

import numpy as np

from .functionals import E1, FunctionalSpec, as_values

__all__ = ["luxemburg_norm", "MAX_DOUBLINGS"]

MAX_DOUBLINGS = 60


def luxemburg_norm(E: FunctionalSpec, u, tol: float = 1e-10) -> float:
    """``inf{λ > 0 : E_1(u/λ) <= 1}`` by bisection, ``inf`` if ``u ∉ D``.

    ``λ ↦ E_1(u/λ)`` is nonincreasing for convex ``E`` with ``E(0) = 0``, and
    ``E_1(u/λ) >= ‖u‖²/λ²`` makes ``‖u‖_{L²(m)}`` a lower bracket.  The upper
    bracket starts at ``max(1, ‖u‖)`` and is doubled at most
    :data:`MAX_DOUBLINGS` times.  The returned value is the upper end of the
    final bracket, so ``E_1(u/result) <= 1`` always holds.

    Parameters
    ----------
    tol : float
        Absolute width of the final bracket.
    """
    a = as_values(E, u)
    l2 = math.sqrt(float(np.dot(E.space.masses, a * a)))
    if l2 == 0.0:
        return 0.0

    def feasible(lam):
        return E1(E, a / lam) <= 1.0

    lo = l2
    if feasible(lo):
        return lo
    hi = max(1.0, l2)
    doublings = 0
    while not feasible(hi):
        if doublings == MAX_DOUBLINGS:
            return math.inf
        lo = hi
        hi *= 2.0
        doublings += 1
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi
