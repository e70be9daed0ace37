"""Sampled checks of the inequalities satisfied by Dirichlet forms.

Every check reports ``LHS − RHS`` per sample, so a negative gap means the
inequality holds, and passes iff the worst gap is at most ``tol``.

Extended reals: if the right-hand side is ``+inf`` the sample is *vacuous*
(counted separately, excluded from the worst gap).  If only the left-hand
side is infinite the gap is ``+inf`` and the check fails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from ._json import dumps
from .errors import ValidationError
from .forms.functionals import FunctionalSpec, evaluate, perturbation
from .space import FiniteSpace, alpha_midpoint_values

__all__ = [
    "Sampler",
    "CheckReport",
    "submodular_gap",
    "alpha_truncation_gap",
    "barthelemy_gap",
    "locality_gap",
    "cone_monotone_gap",
    "abs_gap",
    "check_submodular",
    "check_alpha_truncation",
    "check_barthelemy",
    "check_locality",
    "check_cone_monotone",
    "check_abs_inequality",
    "perturbation",
]

INF = math.inf
Functional = Union[FunctionalSpec, Callable[[np.ndarray], float]]


def _ev(phi: Functional, u: np.ndarray) -> float:
    if isinstance(phi, FunctionalSpec):
        return evaluate(phi, u)
    return float(phi(u))


def _diff(lhs: Sequence[float], rhs: Sequence[float]) -> float | None:
    """``Σlhs − Σrhs`` in extended arithmetic; ``None`` marks a vacuous sample."""
    R = math.fsum(rhs) if all(math.isfinite(x) for x in rhs) else INF
    if math.isinf(R):
        return None
    L = math.fsum(lhs) if all(math.isfinite(x) for x in lhs) else INF
    return L - R


class Sampler:
    """Deterministic generator of random fields and field pairs.

    Parameters
    ----------
    space : FiniteSpace or int
        Space (or vertex count) the fields live on.
    seed : int
    count : int
        Number of samples per call.
    kind : {"uniform", "gaussian", "nonnegative"}
        Distribution of single fields: uniform on ``[-scale, scale]``,
        ``scale``-scaled standard normal, or uniform on ``[0, scale]``.
    scale : float
    zero_fraction : float
        Probability that an entry is set to exactly zero, so that kinks at
        the origin and support boundaries are exercised.
    """

    KINDS = ("uniform", "gaussian", "nonnegative")

    def __init__(self, space: FiniteSpace | int, seed: int = 0, count: int = 200,
                 kind: str = "uniform", scale: float = 1.0, zero_fraction: float = 0.15):
        if kind not in self.KINDS:
            raise ValidationError(f"unknown sampler kind {kind!r}")
        if count < 0:
            raise ValidationError("sample count must be nonnegative")
        self.space = space if isinstance(space, FiniteSpace) else None
        self.n = space.n if isinstance(space, FiniteSpace) else int(space)
        self.seed = int(seed)
        self.count = int(count)
        self.kind = kind
        self.scale = float(scale)
        self.zero_fraction = float(zero_fraction)

    def _rng(self, salt: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, salt])

    def _field(self, rng, kind=None) -> np.ndarray:
        kind = kind or self.kind
        n = self.n
        if kind == "uniform":
            x = rng.uniform(-self.scale, self.scale, n)
        elif kind == "gaussian":
            x = self.scale * rng.standard_normal(n)
        else:
            x = rng.uniform(0.0, self.scale, n)
        x[rng.random(n) < self.zero_fraction] = 0.0
        return x

    def fields(self, kind: str | None = None) -> list[np.ndarray]:
        rng = self._rng(1)
        return [self._field(rng, kind) for _ in range(self.count)]

    def pairs(self, kind: str | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        rng = self._rng(2)
        return [(self._field(rng, kind), self._field(rng, kind)) for _ in range(self.count)]

    def disjoint_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Pairs with ``u·v = 0`` pointwise (random split of the vertices)."""
        rng = self._rng(3)
        out = []
        for _ in range(self.count):
            side = rng.random(self.n) < 0.5
            u, v = self._field(rng), self._field(rng)
            out.append((np.where(side, u, 0.0), np.where(side, 0.0, v)))
        return out

    def comonotone_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Pairs with ``(u_i − u_j)(v_i − v_j) >= 0`` for all ``i, j``."""
        rng = self._rng(4)
        out = []
        for _ in range(self.count):
            u = self._field(rng)
            a, b, c = rng.uniform(0, 2), rng.uniform(0, 1), rng.uniform(-0.5, 0.5) * self.scale
            out.append((u, a * u + b * u ** 3 / max(self.scale, 1e-300) ** 2 + c))
        return out

    def edge_coherent_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Pairs where ``u − v`` never takes opposite signs at the ends of an edge.

        On such pairs every edge sees ``(u∧v, u∨v)`` as a rearrangement of
        ``(u, v)``, so graph energies and pointwise perturbations satisfy the
        lattice inequality with equality.  Needs a sampler built on a space.
        """
        if self.space is None:
            raise ValidationError("edge-coherent pairs need the sampler's space")
        heads, tails, _ = self.space.edge_arrays
        rng = self._rng(6)
        out = []
        for _ in range(self.count):
            u = self._field(rng)
            d = self._field(rng, "gaussian")
            for i, j in zip(heads, tails):
                if d[i] * d[j] < 0:
                    d[j if rng.random() < 0.5 else i] = 0.0
            out.append((u, u + d))
        return out

    def ordered_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Pairs ``(u, v)`` with ``0 <= v <= u`` or ``u <= v <= 0`` (alternating)."""
        rng = self._rng(5)
        out = []
        for k in range(self.count):
            u = np.abs(self._field(rng))
            v = u * rng.uniform(0, 1, self.n)
            v[rng.random(self.n) < 0.2] = 0.0
            out.append((u, v) if k % 2 == 0 else (-u, -v))
        return out


@dataclass
class CheckReport:
    """Result of a sampled inequality check.

    ``worst`` is the largest finite-or-infinite gap over non-vacuous samples
    (``None`` if there were none) and ``witness`` the inputs attaining it.
    """

    name: str
    checked: int
    vacuous: int
    worst: float | None
    witness: dict | None
    tol: float
    extra: dict = field(default_factory=dict)
    gaps: np.ndarray = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.worst is None or self.worst <= self.tol

    def to_dict(self) -> dict:
        return {"name": self.name, "checked": self.checked, "vacuous": self.vacuous,
                "worst": self.worst, "witness": self.witness, "tol": self.tol,
                "passed": self.passed, "extra": self.extra}

    def to_json(self) -> str:
        return dumps(self.to_dict())

    def row(self) -> str:
        worst = "n/a" if self.worst is None else f"{self.worst:+.3e}"
        return f"{self.name:<28s} {self.checked:>7d} {worst:>12s}  {'PASS' if self.passed else 'FAIL'}"


def _report(name, samples, gap_fn, tol, extra=None) -> CheckReport:
    worst = None
    witness = None
    vacuous = 0
    gaps = []
    for args in samples:
        g = gap_fn(*args)
        if g is None:
            vacuous += 1
            gaps.append(np.nan)
            continue
        gaps.append(g)
        if worst is None or g > worst:
            worst = g
            witness = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                       for k, v in zip(("u", "v", "alpha"), args)}
    return CheckReport(name, len(gaps), vacuous, worst, witness, float(tol), extra or {}, np.array(gaps))


def _projector(F):
    if isinstance(F, FunctionalSpec):
        return F.compiled.project
    return lambda u: u


# -- single-sample gaps --------------------------------------------------
def submodular_gap(E: Functional, u, v) -> float | None:
    """``E(u∧v) + E(u∨v) − E(u) − E(v)``."""
    u, v = np.asarray(u, float), np.asarray(v, float)
    return _diff([_ev(E, np.minimum(u, v)), _ev(E, np.maximum(u, v))], [_ev(E, u), _ev(E, v)])


def alpha_truncation_gap(E: Functional, u, v, alpha: float) -> float | None:
    """``E(v + w) + E(u − w) − E(u) − E(v)`` with ``w`` the α-midpoint shift."""
    u, v = np.asarray(u, float), np.asarray(v, float)
    w = alpha_midpoint_values(u - v, alpha)
    # v + w and u − w lie between v and u; clamping removes one-ulp
    # overshoots that would otherwise leave a hard-constraint box
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    a = np.clip(v + w, lo, hi)
    b = np.clip(u - w, lo, hi)
    return _diff([_ev(E, a), _ev(E, b)], [_ev(E, u), _ev(E, v)])


def barthelemy_gap(F: Functional, E: Functional, u, v) -> float | None:
    """``F((|u|∧v) sgn u) + E(|u|∨v) − F(u) − E(v)`` for ``v >= 0``."""
    u, v = np.asarray(u, float), np.asarray(v, float)
    if np.any(v < 0):
        raise ValidationError("the comparison field must be nonnegative")
    au = np.abs(u)
    return _diff([_ev(F, np.minimum(au, v) * np.sign(u)), _ev(E, np.maximum(au, v))],
                 [_ev(F, u), _ev(E, v)])


def locality_gap(phi: Functional, u, v) -> float | None:
    """``|φ(u + v) − φ(u) − φ(v)|`` for disjointly supported ``u, v``."""
    u, v = np.asarray(u, float), np.asarray(v, float)
    if np.any((u != 0) & (v != 0)):
        raise ValidationError("locality needs disjointly supported fields")
    joint = _ev(phi, u + v)
    parts = [_ev(phi, u), _ev(phi, v)]
    if math.isinf(joint) and not all(math.isfinite(p) for p in parts):
        return None
    if math.isinf(joint) or not all(math.isfinite(p) for p in parts):
        return INF
    return abs(joint - math.fsum(parts))


def cone_monotone_gap(psi: Functional, u, v) -> float | None:
    """``ψ(v) − ψ(u)`` for ``0 <= v <= u`` or ``u <= v <= 0``."""
    u, v = np.asarray(u, float), np.asarray(v, float)
    pos = np.all(v >= 0) and np.all(v <= u)
    neg = np.all(v <= 0) and np.all(v >= u)
    if not (pos or neg):
        raise ValidationError("cone monotonicity needs 0 <= v <= u or u <= v <= 0")
    return _diff([_ev(psi, v)], [_ev(psi, u)])


def abs_gap(E: Functional, u) -> float | None:
    """``E(|u|) − E(u)``."""
    u = np.asarray(u, float)
    return _diff([_ev(E, np.abs(u))], [_ev(E, u)])


# -- checks ----------------------------------------------------------------
def check_submodular(E: Functional, sampler: Sampler, tol: float = 1e-10, project: bool = True) -> CheckReport:
    """Lattice inequality ``E(u∧v) + E(u∨v) <= E(u) + E(v)``.

    ``extra["comonotone_max_abs_gap"]`` is the worst ``|gap|`` over
    comonotone pairs and ``extra["edge_coherent_max_abs_gap"]`` the worst over
    pairs whose difference keeps one sign along every edge; both probe exact
    modularity.  Graph energies are generally not modular on comonotone pairs
    but are on edge-coherent ones.
    """
    P = _projector(E) if project else (lambda u: u)
    rep = _report("submodular", [(P(u), P(v)) for u, v in sampler.pairs()],
                  lambda u, v: submodular_gap(E, u, v), tol)
    como = [submodular_gap(E, P(u), P(v)) for u, v in sampler.comonotone_pairs()]
    como = [abs(g) for g in como if g is not None]
    rep.extra["comonotone_max_abs_gap"] = max(como) if como else None
    if sampler.space is not None:
        coh = [submodular_gap(E, P(u), P(v)) for u, v in sampler.edge_coherent_pairs()]
        coh = [abs(g) for g in coh if g is not None]
        rep.extra["edge_coherent_max_abs_gap"] = max(coh) if coh else None
    return rep


def check_alpha_truncation(E: Functional, sampler: Sampler, alphas: Sequence[float] = (0.1, 1.0, 10.0),
                           tol: float = 1e-10, project: bool = True) -> CheckReport:
    """``E(v + w) + E(u − w) <= E(u) + E(v)`` with ``w = ½((u−v+α)_+ − (u−v−α)_−)``."""
    P = _projector(E) if project else (lambda u: u)
    samples = [(P(u), P(v), float(a)) for u, v in sampler.pairs() for a in alphas]
    return _report("alpha_truncation", samples, lambda u, v, a: alpha_truncation_gap(E, u, v, a), tol,
                   {"alphas": [float(a) for a in alphas]})


def check_barthelemy(F: Functional, E: Functional, sampler: Sampler, tol: float = 1e-10,
                     project: bool = True) -> CheckReport:
    """``F((|u|∧v) sgn u) + E(|u|∨v) <= F(u) + E(v)`` on signed ``u`` and ``v >= 0``.

    The second field of each sampled pair is folded to ``|v|``.
    """
    PF = _projector(F) if project else (lambda u: u)
    PE = _projector(E) if project else (lambda u: u)
    samples = [(PF(u), np.abs(PE(np.abs(v)))) for u, v in sampler.pairs()]
    return _report("barthelemy", samples, lambda u, v: barthelemy_gap(F, E, u, v), tol)


def check_locality(phi: Functional, sampler: Sampler, tol: float = 1e-10, project: bool = True) -> CheckReport:
    """``φ(u + v) = φ(u) + φ(v)`` whenever ``|u| ∧ |v| = 0``."""
    P = _projector(phi) if project else (lambda u: u)

    def proj_pair(u, v):
        # projection is coordinatewise and fixes 0, so disjointness survives
        return P(u), P(v)

    return _report("locality", [proj_pair(u, v) for u, v in sampler.disjoint_pairs()],
                   lambda u, v: locality_gap(phi, u, v), tol)


def check_cone_monotone(psi: Functional, sampler: Sampler, tol: float = 1e-10) -> CheckReport:
    """``ψ(v) <= ψ(u)`` for ``0 <= v <= u`` and for ``u <= v <= 0``."""
    return _report("cone_monotone", sampler.ordered_pairs(), lambda u, v: cone_monotone_gap(psi, u, v), tol)


def check_abs_inequality(E: Functional, sampler: Sampler, tol: float = 1e-10, project: bool = True) -> CheckReport:
    """``E(|u|) <= E(u)`` on signed samples; ``E`` must be symmetric."""
    if isinstance(E, FunctionalSpec) and not E.is_symmetric:
        raise ValidationError("the absolute-value inequality is checked for symmetric functionals only")
    P = _projector(E) if project else (lambda u: u)
    return _report("abs_inequality", [(P(u),) for u in sampler.fields()], lambda u: abs_gap(E, u), tol)
