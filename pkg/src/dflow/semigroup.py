"""Gradient-flow semigroups by implicit Euler, and trajectory comparisons.

``evolve`` iterates the resolvent ``u_{k+1} = prox(F, h, u_k)`` with a
uniform step ``h = t_end/steps``.  Trajectories keep every state so that
domination and ordering can be checked at each time step.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ProxConvergenceError, SpaceMismatchError, ValidationError
from .forms.functionals import FunctionalSpec, as_values, evaluate
from .forms.prox import Resolvent
from .space import Field, FiniteSpace

__all__ = [
    "Trajectory",
    "evolve",
    "flow_states",
    "DominationReport",
    "check_trajectory_domination",
    "dominate",
    "ContractionReport",
    "contraction_checks",
]


@dataclass
class Trajectory:
    """States of an implicit-Euler flow on a uniform time grid.

    Attributes
    ----------
    times : ndarray, shape (k + 1,)
    states : ndarray, shape (k + 1, n)
        ``states[0]`` is the initial datum actually used (after projection).
    generator : str
        Digest of the generating functional.
    metadata : dict
        Step size, tolerances, and the initial-data projection record.
    """

    space: FiniteSpace
    times: np.ndarray
    states: np.ndarray
    generator: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.shape != (self.times.size, self.space.n):
            raise ValidationError("states must have one row per time and one column per vertex")
        if self.times.size and (self.times[0] != 0 or np.any(np.diff(self.times) <= 0)):
            raise ValidationError("times must start at 0 and increase strictly")

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def steps_per_unit(self) -> float:
        return (len(self) - 1) / self.times[-1] if len(self) > 1 else 0.0

    def state(self, k: int) -> Field:
        return Field(self.space, self.states[k])

    @property
    def final(self) -> Field:
        return self.state(-1)

    def energies(self, F: FunctionalSpec) -> np.ndarray:
        return np.array([evaluate(F, s) for s in self.states])

    def l2_norms(self) -> np.ndarray:
        return np.sqrt(self.states ** 2 @ self.space.masses)

    def to_csv(self, path: str | Path | None = None) -> str:
        """CSV with header ``time,v0,...,v{n-1}``; written to ``path`` if given."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time"] + [f"v{i}" for i in range(self.space.n)])
        for t, row in zip(self.times, self.states):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_dict(self) -> dict:
        return {
            "generator": self.generator,
            "space": self.space.key,
            "metadata": self.metadata,
            "times": self.times.tolist(),
            "states": self.states.tolist(),
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text


def flow_states(R: Resolvent, u0: np.ndarray, steps: int) -> np.ndarray:
    """Iterate a resolvent ``steps`` times, raising with the failing step index."""
    out = np.empty((steps + 1, u0.size))
    out[0] = u0
    u = u0
    for k in range(steps):
        try:
            u = R.solve(u, warm=u).u
        except ProxConvergenceError as exc:
            raise ProxConvergenceError(f"step {k + 1} of {steps}: {exc}", exc.gap,
                                       exc.iterations, step=k + 1) from None
        out[k + 1] = u
    return out


def _project_initial(F: FunctionalSpec, u0: np.ndarray) -> tuple[np.ndarray, dict]:
    c = F.compiled
    proj = c.project(u0)
    moved = np.flatnonzero(proj != u0)
    record = {"projected": bool(moved.size), "projected_vertices": moved.tolist(),
              "projection_distance": float(np.sqrt(np.dot(F.space.masses, (proj - u0) ** 2)))}
    return proj, record


def evolve(F: FunctionalSpec, u0, t_end: float = 1.0, steps: int = 100, tol: float = 1e-10,
           method: str = "auto", resolvent: Resolvent | None = None) -> Trajectory:
    """Implicit-Euler trajectory of the semigroup generated by ``F``.

    Initial data outside the box of hard constraints is projected onto it
    first; the projection is recorded in ``metadata``.

    Parameters
    ----------
    F : FunctionalSpec
    u0 : Field or array
    t_end : float
        Final time, ``> 0``.
    steps : int
        Number of uniform steps of size ``t_end/steps``.
    tol : float
        Resolvent tolerance per step.
    resolvent : Resolvent, optional
        Precomputed resolvent for step ``t_end/steps``; reused across calls.

    Examples
    --------
    >>> from dflow.space import FiniteSpace
    >>> from dflow.forms import Quadratic
    >>> X = FiniteSpace.path(2)
    >>> evolve(Quadratic(X), [1.0, 2.0], t_end=1.0, steps=1).final.tolist()
    [0.5, 1.0]
    """
    if not (t_end > 0 and math.isfinite(t_end)):
        raise ValidationError(f"t_end must be positive, got {t_end}")
    if int(steps) != steps or steps < 1:
        raise ValidationError(f"steps must be a positive integer, got {steps}")
    steps = int(steps)
    h = t_end / steps
    a = as_values(F, u0).astype(float)
    start, record = _project_initial(F, a)
    R = resolvent or Resolvent(F, h, tol, method=method)
    if not math.isclose(R.lam, h, rel_tol=1e-12) or R.F is not F:
        raise ValidationError("supplied resolvent does not match the functional and step")
    states = flow_states(R, start, steps)
    times = np.arange(steps + 1) * h
    times[-1] = t_end
    meta = {"t_end": float(t_end), "steps": steps, "h": h, "tol": float(R.tol),
            "method": R.method, "spec": F.to_dict(), **record}
    return Trajectory(F.space, times, states, F.digest, meta)


@dataclass
class DominationReport:
    """Worst value of ``|S_k,i| − T_k,i`` over the grid."""

    violation: float
    step: int
    vertex: int
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_trajectory_domination(S: Trajectory, T: Trajectory, tol: float | None = None) -> DominationReport:
    """Check ``|S_t f| <= T_t|f|`` at every step and vertex.

    ``S`` is evolved from ``f`` and ``T`` from ``|f|``.  The default tolerance is
    ``1e-8·‖f‖_∞``.
    """
    if S.space != T.space:
        raise SpaceMismatchError("trajectories live on different spaces")
    if S.times.shape != T.times.shape or not np.allclose(S.times, T.times, rtol=1e-12, atol=0):
        raise ValidationError("trajectories use different time grids")
    if tol is None:
        tol = 1e-8 * float(np.max(np.abs(S.states[0]), initial=0.0))
    gap = np.abs(S.states) - T.states
    k, i = np.unravel_index(int(np.argmax(gap)), gap.shape)
    worst = float(gap[k, i])
    return DominationReport(worst, int(k), int(i), float(tol), worst <= tol)


def dominate(F: FunctionalSpec, E: FunctionalSpec, u0, t_end: float = 1.0, steps: int = 100,
             tol: float = 1e-10, check_tol: float | None = None) -> tuple[DominationReport, Trajectory, Trajectory]:
    """Evolve ``S`` under ``F`` from ``u0`` and ``T`` under ``E`` from ``|u0|`` and compare."""
    a = as_values(F, u0)
    S = evolve(F, a, t_end, steps, tol)
    T = evolve(E, np.abs(a), t_end, steps, tol)
    return check_trajectory_domination(S, T, check_tol), S, T


@dataclass
class ContractionReport:
    """Worst gaps (negative means satisfied) of the three contraction properties."""

    pairs: int
    l2: float
    order: float
    linf: float
    tol: float
    witness: dict

    @property
    def passed(self) -> bool:
        return max(self.l2, self.order, self.linf) <= self.tol

    def to_dict(self) -> dict:
        return {"pairs": self.pairs, "l2": self.l2, "order": self.order, "linf": self.linf,
                "tol": self.tol, "passed": self.passed, "witness": self.witness}


def contraction_checks(F: FunctionalSpec, pairs: Iterable[tuple], t_end: float = 1.0, steps: int = 20,
                       tol: float = 1e-8, prox_tol: float = 1e-11) -> ContractionReport:
    """L² nonexpansiveness, order preservation and L∞ contraction of ``S_t``.

    For each pair ``(u, v)`` (projected onto the constraint box) the flows of
    ``u``, ``v`` and ``u ∧ v`` are computed; order preservation is checked on
    the two ordered pairs ``u ∧ v <= u`` and ``u ∧ v <= v``.
    """
    R = Resolvent(F, t_end / steps, prox_tol)
    c = F.compiled
    m = F.space.masses
    worst = {"l2": -math.inf, "order": -math.inf, "linf": -math.inf}
    witness: dict = {}
    count = 0
    for u, v in pairs:
        a = c.project(as_values(F, u).astype(float))
        b = c.project(as_values(F, v).astype(float))
        lo = np.minimum(a, b)
        Sa = flow_states(R, a, steps)[-1]
        Sb = flow_states(R, b, steps)[-1]
        Sl = flow_states(R, lo, steps)[-1]
        gaps = {
            "l2": math.sqrt(float(np.dot(m, (Sa - Sb) ** 2))) - math.sqrt(float(np.dot(m, (a - b) ** 2))),
            "order": float(max(np.max(Sl - Sa), np.max(Sl - Sb))),
            "linf": float(np.max(np.abs(Sa - Sb)) - np.max(np.abs(a - b))),
        }
        for key, g in gaps.items():
            if g > worst[key]:
                worst[key] = g
                witness[key] = {"u": a.tolist(), "v": b.tolist()}
        count += 1
    if count == 0:
        worst = {k: 0.0 for k in worst}
    return ContractionReport(count, worst["l2"], worst["order"], worst["linf"], float(tol), witness)
