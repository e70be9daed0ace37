"""Norm-capacity of vertex sets.

``normcap(A) = inf{‖u‖_D : u >= 1 on A}``, with ``‖·‖_D`` the Luxemburg norm
of the form.  In the discrete topology every set is its own neighbourhood.

The value is found by bisection on ``t``: ``t`` is feasible iff
``min{E_1(w) : w >= 1/t on A} <= 1``, and the inner problem is the resolvent
``argmin ½‖w‖² + ½E(w)`` at ``v = 0`` under the extra lower bound (since
``E_1 = 2·(½‖w‖² + ½E(w))``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .forms.functionals import E1, FunctionalSpec
from .forms.norm import MAX_DOUBLINGS
from .forms.prox import Resolvent
from .space import Field, VertexSet

__all__ = ["CapacityResult", "normcap", "CapacityLemmaReport", "check_capacity_lemmas"]


@dataclass
class CapacityResult:
    """Capacity value with its (approximate) minimizer.

    ``value`` is ``inf`` and ``minimizer`` is ``None`` when no ``u >= 1`` on
    the set has finite energy.
    """

    vertices: tuple
    value: float
    minimizer: Field | None
    outer_tol: float
    inner_tol: float
    bisection_steps: int = 0

    @property
    def infinite(self) -> bool:
        return math.isinf(self.value)

    def to_dict(self) -> dict:
        return {"set": list(self.vertices), "value": self.value,
                "minimizer": None if self.minimizer is None else self.minimizer.tolist(),
                "outer_tol": self.outer_tol, "inner_tol": self.inner_tol,
                "bisection_steps": self.bisection_steps}


def _as_set(E: FunctionalSpec, A) -> VertexSet:
    return A if isinstance(A, VertexSet) else VertexSet(E.space, A)


def normcap(E: FunctionalSpec, A, tol: float = 1e-9, inner_tol: float = 1e-11) -> CapacityResult:
    """Norm-capacity of ``A`` for the form ``E``.

    Parameters
    ----------
    E : FunctionalSpec
    A : VertexSet or iterable of int
    tol : float
        Width of the final bracket on the capacity value.
    inner_tol : float
        Resolvent tolerance of the feasibility solves.

    Examples
    --------
    >>> from dflow.space import FiniteSpace
    >>> from dflow.forms import Zero
    >>> X = FiniteSpace([4.0, 1.0])
    >>> round(normcap(Zero(X), [0]).value, 6)
    2.0
    """
    S = _as_set(E, A)
    idx = np.array(S.indices, dtype=np.intp)
    n = E.space.n
    if idx.size == 0:
        return CapacityResult((), 0.0, Field(E.space, np.zeros(n)), tol, inner_tol)
    c = E.compiled
    if np.any(c.hi[idx] <= 0):
        return CapacityResult(S.indices, math.inf, None, tol, inner_tol)

    cache = {}

    def inner(t):
        if t not in cache:
            lower = np.full(n, -np.inf)
            lower[idx] = 1.0 / t
            if np.any(lower > c.hi):
                cache[t] = (math.inf, None)
            else:
                R = Resolvent(E, 0.5, inner_tol, lower=lower)
                w = R.solve(np.zeros(n)).u
                cache[t] = (E1(E, w), w)
        return cache[t]

    def feasible(t):
        return inner(t)[0] <= 1.0

    lo = math.sqrt(float(E.space.masses[idx].sum()))
    steps = 0
    if feasible(lo):
        hi = lo
    else:
        hi = max(1.0, lo)
        doublings = 0
        while not feasible(hi):
            if doublings == MAX_DOUBLINGS:
                return CapacityResult(S.indices, math.inf, None, tol, inner_tol)
            lo = hi
            hi *= 2.0
            doublings += 1
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            steps += 1
            if feasible(mid):
                hi = mid
            else:
                lo = mid
    w = inner(hi)[1]
    u = hi * w
    u[idx] = np.maximum(u[idx], 1.0)
    return CapacityResult(S.indices, hi, Field(E.space, u), tol, inner_tol, steps)


@dataclass
class CapacityLemmaReport:
    """Worst gaps (negative means satisfied) of the capacity lemmas."""

    subadditivity: float
    monotonicity: float
    union_subadditivity: float
    slack: float
    witnesses: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return max(self.subadditivity, self.monotonicity, self.union_subadditivity) <= self.slack

    def to_dict(self) -> dict:
        return {"subadditivity": self.subadditivity, "monotonicity": self.monotonicity,
                "union_subadditivity": self.union_subadditivity, "slack": self.slack,
                "passed": self.passed, "witnesses": self.witnesses,
                "values": {",".join(map(str, k)): v for k, v in self.values.items()}}


def _gap(a: float, b: float) -> float:
    """``a − b`` with ``inf − inf`` read as satisfied."""
    if math.isinf(b):
        return -math.inf
    return a - b


def check_capacity_lemmas(E: FunctionalSpec, pairs: Iterable[tuple], families: Sequence[Sequence] = (),
                          tol: float = 1e-9) -> CapacityLemmaReport:
    """Subadditivity, monotonicity and finite-union subadditivity of ``normcap``.

    For each pair ``(A, B)``: ``cap(A∪B) <= cap(A) + cap(B)``, and
    ``cap(A∩B) <= cap(A) <= cap(A∪B)`` (likewise for ``B``).  For each family
    ``[A_1, ..., A_k]``: ``cap(∪A_i) <= Σ cap(A_i)``.  The slack allowed is
    ``3·tol`` to absorb the bisection width.
    """
    memo: dict[tuple, float] = {}

    def cap(s) -> float:
        key = _as_set(E, s).indices
        if key not in memo:
            memo[key] = normcap(E, key, tol).value
        return memo[key]

    worst = {"subadditivity": -math.inf, "monotonicity": -math.inf, "union_subadditivity": -math.inf}
    wit: dict = {}

    def note(kind, g, sets):
        if g > worst[kind]:
            worst[kind] = g
            wit[kind] = [list(_as_set(E, s).indices) for s in sets]

    for A, B in pairs:
        A, B = _as_set(E, A), _as_set(E, B)
        U, I = A | B, A & B
        note("subadditivity", _gap(cap(U), cap(A) + cap(B)), (A, B))
        for small, big in ((I, A), (I, B), (A, U), (B, U)):
            note("monotonicity", _gap(cap(small), cap(big)), (small, big))
    for fam in families:
        sets = [_as_set(E, s) for s in fam]
        if not sets:
            continue
        U = sets[0]
        for s in sets[1:]:
            U = U | s
        note("union_subadditivity", _gap(cap(U), sum(cap(s) for s in sets)), sets)
    worst = {k: (0.0 if v == -math.inf else v) for k, v in worst.items()}
    return CapacityLemmaReport(worst["subadditivity"], worst["monotonicity"],
                               worst["union_subadditivity"], 3 * tol, wit, dict(memo))
