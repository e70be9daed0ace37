"""Recover a pointwise integrand ``B`` from a local monotone functional ``ψ``.

Pipeline on a finite space, for ``ψ: D⁺ → [0, ∞]`` local and monotone on the
positive cone:

1. ``μ_u(K) = ψ(u·1_K)``: the infimum of ``ψ(f)`` over ``f >= u`` on ``K``
   (``f >= 0``) is attained at ``u·1_K`` by monotonicity.
2. A reference measure from a finite dictionary ``{f_n}``:
   ``μ(x) = Σ_n 2^{-n} μ_{f_n}({x}) / (1 + ψ(f_n))``.
3. Densities ``B_{f_n}(x) = μ_{f_n}({x}) / μ(x)``.
4. ``B(x, s) = sup{B_{f_n}(x) : f_n(x) < s}`` for ``s`` in the hull ``I(x)`` of
   ``{0} ∪ {f_n(x)}``, ``+inf`` outside it, and ``0`` for an empty supremum.

Signed functionals are split into ``ψ_+(f) = ψ(f)`` and ``ψ_-(f) = ψ(−f)``
on the positive cone, reconstructed against a common measure, and glued.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from ._json import dumps, unjson_float
from .errors import AbsoluteContinuityError, ValidationError
from .forms.functionals import FunctionalSpec, perturbation
from .forms.profiles import BProfile, VertexMeasure, weighted_integral
from .properties import Sampler, _report, cone_monotone_gap, locality_gap
from .space import VertexSet

__all__ = [
    "PsiOracle",
    "Dictionary",
    "ladder",
    "mu_u",
    "point_masses",
    "MeasureLemmaReport",
    "check_measure_lemmas",
    "radon_nikodym",
    "build_reference_measure",
    "common_reference_measure",
    "ReconstructedB",
    "GluedB",
    "reconstruct_B",
    "RepresentationReport",
    "verify_representation",
    "decompose_signed",
    "reconstruct_signed",
]

INF = math.inf


class PsiOracle:
    """Black-box functional on the positive cone of a finite space.

    Parameters
    ----------
    evaluate : callable
        Maps a nonnegative array of length ``n`` to ``[0, ∞]``.
    n : int
    name : str, optional
    """

    def __init__(self, evaluate: Callable[[np.ndarray], float], n: int, name: str = "psi"):
        self._f = evaluate
        self.n = int(n)
        self.name = name
        self.calls = 0

    def __call__(self, f) -> float:
        a = np.asarray(f, dtype=float)
        if a.shape != (self.n,):
            raise ValidationError(f"{self.name}: expected {self.n} values, got shape {a.shape}")
        if np.any(a < 0):
            raise ValidationError(f"{self.name} is defined on nonnegative fields only")
        self.calls += 1
        return float(self._f(a))

    @classmethod
    def from_perturbation(cls, F: FunctionalSpec, E: FunctionalSpec, sign: int = 1) -> "PsiOracle":
        """``f ↦ (F − E)(sign·f)`` for ``f >= 0``."""
        psi = perturbation(F, E)
        if sign not in (1, -1):
            raise ValidationError("sign must be +1 or -1")
        return cls(lambda f: psi(sign * f), F.space.n, "psi" if sign == 1 else "psi_minus")

    @classmethod
    def from_profile(cls, profile: BProfile, mu: VertexMeasure, sign: int = 1) -> "PsiOracle":
        """``f ↦ Σ_x B(x, sign·f_x)·μ_x``."""
        w = np.asarray(mu.masses)
        return cls(lambda f: weighted_integral(profile.values(sign * f), w), profile.n, "psi_profile")

    def validate(self, sampler: Sampler | None = None, tol: float = 1e-12, strict: bool = True) -> dict:
        """Check ``ψ(0) = 0``, locality and monotonicity on the positive cone.

        Returns the three reports; raises :class:`ValidationError` on failure
        when ``strict``.
        """
        sampler = sampler or Sampler(self.n, seed=0, count=50, kind="nonnegative")
        zero = self(np.zeros(self.n))
        pos_pairs = [(np.abs(u), np.abs(v)) for u, v in sampler.disjoint_pairs()]
        loc = _report("locality", pos_pairs, lambda u, v: locality_gap(self, u, v), tol)
        ordered = [(u, v) for u, v in sampler.ordered_pairs() if np.all(u >= 0)]
        mono = _report("cone_monotone", ordered, lambda u, v: cone_monotone_gap(self, u, v), tol)
        out = {"psi_zero": zero, "locality": loc, "cone_monotone": mono,
               "passed": zero == 0 and loc.passed and mono.passed}
        if strict and not out["passed"]:
            raise ValidationError(f"{self.name} failed validation: psi(0)={zero}, "
                                  f"locality worst={loc.worst}, monotone worst={mono.worst}")
        return out


@dataclass
class Dictionary:
    """Finite ordered list of nonnegative bounded fields."""

    entries: list
    ladder_levels: tuple = ()

    def __post_init__(self):
        ents = [np.asarray(e, dtype=float) for e in self.entries]
        for e in ents:
            if e.ndim != 1 or not np.all(np.isfinite(e)) or np.any(e < 0):
                raise ValidationError("dictionary entries must be finite nonnegative fields")
        if ents and len({e.size for e in ents}) != 1:
            raise ValidationError("dictionary entries must have a common length")
        self.entries = ents

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __add__(self, other: "Dictionary") -> "Dictionary":
        return Dictionary(self.entries + other.entries, self.ladder_levels or other.ladder_levels)

    @classmethod
    def from_ladder(cls, targets: Iterable, m: int = 20, include_one: bool = True) -> "Dictionary":
        lv = ladder(m, include_one)
        ents = [lam * np.asarray(u, dtype=float) for u in targets for lam in lv]
        return cls(ents, tuple(lv))


def ladder(m: int = 20, include_one: bool = True) -> list[float]:
    """``λ_k = 1 − 2^{-k}`` for ``k = 1..m``, followed by ``1`` if requested."""
    if m < 1:
        raise ValidationError("ladder needs at least one level")
    lv = [1.0 - 2.0 ** (-k) for k in range(1, m + 1)]
    return lv + [1.0] if include_one else lv


def _mask(n: int, K) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    idx = list(K.indices if isinstance(K, VertexSet) else K)
    if idx and (min(idx) < 0 or max(idx) >= n):
        raise ValidationError("vertex index out of range")
    mask[idx] = True
    return mask


def mu_u(psi: PsiOracle, u, K, search: int = 0, seed: int = 0) -> float:
    """``μ_u(K) = ψ(u·1_K)``.

    With ``search > 0``, that many random feasible ``f`` (``f >= u`` on ``K``,
    ``f >= 0`` elsewhere) are also evaluated; finding a smaller value means
    ``ψ`` is not monotone and raises :class:`ValidationError`.
    """
    a = np.asarray(u, dtype=float)
    if np.any(a < 0):
        raise ValidationError("mu_u needs a nonnegative field")
    mask = _mask(psi.n, K)
    base = np.where(mask, a, 0.0)
    val = psi(base)
    if search:
        rng = np.random.default_rng(seed)
        scale = float(np.max(a, initial=0.0)) or 1.0
        for _ in range(search):
            f = base + rng.uniform(0, scale, psi.n) * (rng.random(psi.n) < 0.5)
            g = psi(f)
            if g < val - 1e-12 * max(1.0, abs(val)):
                raise ValidationError(f"random feasible field beats u·1_K ({g} < {val}); psi is not monotone")
    return val


def point_masses(psi: PsiOracle, u) -> np.ndarray:
    """``μ_u({x})`` for every vertex ``x``."""
    a = np.asarray(u, dtype=float)
    return np.array([mu_u(psi, a, [x]) for x in range(psi.n)])


@dataclass
class MeasureLemmaReport:
    """Worst gaps of the five set-function lemmas for ``μ_u``."""

    additivity: float
    monotonicity: float
    submodularity: float
    comparison: float
    zero_set: float
    total_mass: float
    tol: float

    @property
    def worst(self) -> float:
        return max(self.additivity, self.monotonicity, self.submodularity, self.comparison,
                   self.zero_set, self.total_mass)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def _ext_sub(a: float, b: float) -> float:
    if math.isinf(a) and math.isinf(b):
        return 0.0
    return a - b


def check_measure_lemmas(psi: PsiOracle, u, families: Iterable[tuple], v=None,
                         tol: float = 1e-12) -> MeasureLemmaReport:
    """Additivity, monotonicity, submodularity, comparison and zero-set lemmas.

    For each pair ``(K1, K2)``: additivity on the disjoint pair
    ``(K1 \\ K2, K2)``; ``μ_u(K1) <= μ_u(K1 ∪ K2)``; submodularity on
    ``(K1, K2)``; ``μ_u(G) <= μ_v(G)`` on ``G = K1 ∩ {u <= v}`` (``v``
    defaults to ``2u``); and ``μ_u(K1 ∩ {u = 0}) = 0``.  The identity
    ``μ_u(X) = ψ(u)`` is reported as ``total_mass``.
    """
    a = np.asarray(u, dtype=float)
    b = 2 * a if v is None else np.asarray(v, dtype=float)
    n = psi.n
    leq = set(np.flatnonzero(a <= b).tolist())
    zeros = set(np.flatnonzero(a == 0).tolist())

    def m(arr, K):
        return mu_u(psi, arr, sorted(K))

    add = mono = sub = comp = zset = -INF
    for K1, K2 in families:
        K1 = set(K1.indices if isinstance(K1, VertexSet) else K1)
        K2 = set(K2.indices if isinstance(K2, VertexSet) else K2)
        D = K1 - K2
        add = max(add, abs(_ext_sub(m(a, D | K2), m(a, D) + m(a, K2))))
        mono = max(mono, _ext_sub(m(a, K1), m(a, K1 | K2)), _ext_sub(m(a, K2), m(a, K1 | K2)))
        lhs = m(a, K1 | K2) + m(a, K1 & K2)
        rhs = m(a, K1) + m(a, K2)
        sub = max(sub, _ext_sub(lhs, rhs) if not math.isinf(rhs) else -INF)
        G = K1 & leq
        comp = max(comp, _ext_sub(m(a, G), m(b, G)) if not math.isinf(m(b, G)) else -INF)
        zset = max(zset, abs(m(a, K1 & zeros)))
    total = abs(_ext_sub(m(a, range(n)), psi(a)))
    vals = [0.0 if x == -INF else x for x in (add, mono, sub, comp, zset)]
    return MeasureLemmaReport(*vals, total, float(tol))


def radon_nikodym(mu_u_values, mu: VertexMeasure) -> np.ndarray:
    """Density ``B_u(x) = μ_u({x}) / μ(x)``, ``0`` where both vanish.

    Raises
    ------
    AbsoluteContinuityError
        If ``μ_u({x}) > 0`` at a vertex with ``μ(x) = 0``.
    """
    mu_vals = np.asarray(mu_u_values, dtype=float)
    ref = np.asarray(mu.masses if isinstance(mu, VertexMeasure) else mu, dtype=float)
    if mu_vals.shape != ref.shape:
        raise ValidationError("measure lengths differ")
    bad = np.flatnonzero((mu_vals > 0) & (ref == 0))
    if bad.size:
        raise AbsoluteContinuityError(f"mu_u charges vertices {bad.tolist()} that the reference measure does not",
                                      bad)
    out = np.zeros_like(mu_vals)
    pos = ref > 0
    out[pos] = mu_vals[pos] / ref[pos]
    return out


def _entry_terms(psi: PsiOracle, dictionary) -> list[tuple[np.ndarray, float]]:
    terms = []
    for k, f in enumerate(dictionary):
        total = psi(f)
        if math.isinf(total):
            raise ValidationError(f"dictionary entry {k} lies outside the domain of {psi.name}")
        terms.append((point_masses(psi, f), total))
    return terms


def common_reference_measure(pairs: Sequence[tuple[PsiOracle, Iterable]]) -> VertexMeasure:
    """Reference measure of the concatenated dictionary of several functionals.

    Entry ``n`` (counting from 1 through all dictionaries in order) weighs
    ``2^{-n} μ_{f_n} / (1 + μ_{f_n}(X))`` with its own functional.
    """
    out = None
    k = 0
    for psi, dictionary in pairs:
        if out is None:
            out = np.zeros(psi.n)
        for masses, total in _entry_terms(psi, dictionary):
            k += 1
            out += 2.0 ** (-k) * masses / (1.0 + total)
    if out is None:
        raise ValidationError("no functionals supplied")
    return VertexMeasure(out)


def build_reference_measure(psi: PsiOracle, dictionary) -> VertexMeasure:
    """``μ = Σ_n 2^{-n} μ_{f_n} / (1 + μ_{f_n}(X))`` over the dictionary, ``n >= 1``."""
    return common_reference_measure([(psi, dictionary)])


@dataclass
class ReconstructedB:
    """Per-vertex step functions on the positive half line.

    ``thresholds[x]`` is sorted ascending and ``levels[x]`` is the running
    maximum of the densities, so ``B(x, s) = levels[x][k]`` for the largest
    ``k`` with ``thresholds[x][k] < s`` (``0`` if none), for ``s`` in
    ``hull[x]``; ``+inf`` outside the hull.
    """

    thresholds: list
    levels: list
    hull: list
    mu: VertexMeasure

    @property
    def n(self) -> int:
        return len(self.thresholds)

    def __call__(self, x: int, s: float) -> float:
        lo, hi = self.hull[x]
        if not (lo <= s <= hi):
            return INF
        thr = self.thresholds[x]
        k = int(np.searchsorted(thr, s, side="left")) - 1
        return float(self.levels[x][k]) if k >= 0 else 0.0

    def values(self, s) -> np.ndarray:
        return np.array([self(x, float(v)) for x, v in enumerate(np.asarray(s, dtype=float))])

    def outside(self, u) -> bool:
        """True when some ``u_x`` leaves the hull ``I(x)``."""
        a = np.asarray(u, dtype=float)
        return any(not (lo <= v <= hi) for v, (lo, hi) in zip(a, self.hull))

    def integral(self, u) -> float:
        """``Σ_x B(x, u_x)·μ(x)`` with ``0·∞ = 0``, except that leaving the hull is always ``+inf``.

        The hull cutoff is a hard constraint even at vertices the reference
        measure does not charge; otherwise an indicator-type ``ψ``, which
        vanishes on its whole domain and so produces a zero measure, could
        not be represented.
        """
        if self.outside(u):
            return INF
        return weighted_integral(self.values(u), np.asarray(self.mu.masses))

    def to_dict(self) -> dict:
        return {"vertices": [{"thresholds": list(map(float, t)), "levels": list(map(float, l)),
                              "hull": [float(h[0]), float(h[1])]}
                             for t, l, h in zip(self.thresholds, self.levels, self.hull)],
                "mu": self.mu.masses.tolist()}

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ReconstructedB":
        verts = d["vertices"]
        thr = [np.array([unjson_float(x) for x in v["thresholds"]]) for v in verts]
        lev = [np.array([unjson_float(x) for x in v["levels"]]) for v in verts]
        hull = [(unjson_float(v["hull"][0]), unjson_float(v["hull"][1])) for v in verts]
        return cls(thr, lev, hull, VertexMeasure(d["mu"]))


def reconstruct_B(psi: PsiOracle, dictionary, mu: VertexMeasure | None = None) -> ReconstructedB:
    """Step-function reconstruction of ``B`` from dictionary densities.

    ``mu`` defaults to :func:`build_reference_measure` of the same dictionary.
    """
    mu = mu or build_reference_measure(psi, dictionary)
    n = psi.n
    thr = [[] for _ in range(n)]
    lev = [[] for _ in range(n)]
    for f in dictionary:
        dens = radon_nikodym(point_masses(psi, f), mu)
        for x in range(n):
            thr[x].append(float(f[x]))
            lev[x].append(float(dens[x]))
    thresholds, levels, hull = [], [], []
    for x in range(n):
        t = np.asarray(thr[x])
        l = np.asarray(lev[x])
        order = np.lexsort((l, t))
        t, l = t[order], l[order]
        thresholds.append(t)
        levels.append(np.maximum.accumulate(l) if l.size else l)
        hull.append((0.0, float(t.max()) if t.size else 0.0))
    return ReconstructedB(thresholds, levels, hull, mu)


@dataclass
class GluedB:
    """``B(x, s) = B_+(x, s)`` for ``s >= 0`` and ``B_-(x, −s)`` for ``s < 0``."""

    plus: ReconstructedB
    minus: ReconstructedB

    def __post_init__(self):
        if self.plus.mu != self.minus.mu:
            raise ValidationError("glued halves must share one reference measure")

    @property
    def mu(self) -> VertexMeasure:
        return self.plus.mu

    @property
    def n(self) -> int:
        return self.plus.n

    def __call__(self, x: int, s: float) -> float:
        return self.plus(x, s) if s >= 0 else self.minus(x, -s)

    def values(self, s) -> np.ndarray:
        return np.array([self(x, float(v)) for x, v in enumerate(np.asarray(s, dtype=float))])

    def integral(self, u) -> float:
        a = np.asarray(u, dtype=float)
        if self.plus.outside(np.maximum(a, 0)) or self.minus.outside(np.maximum(-a, 0)):
            return INF
        return weighted_integral(self.values(a), np.asarray(self.mu.masses))

    def to_dict(self) -> dict:
        return {"plus": self.plus.to_dict(), "minus": self.minus.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "GluedB":
        return cls(ReconstructedB.from_dict(d["plus"]), ReconstructedB.from_dict(d["minus"]))


@dataclass
class RepresentationReport:
    """Worst ``|ψ(u) − Σ B(x, u_x) μ(x)|`` and its excess over the allowed bound."""

    checked: int
    worst: float
    worst_excess: float
    bound_factor: float
    atol: float
    witness: list | None = None

    @property
    def passed(self) -> bool:
        return self.worst_excess <= 0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def verify_representation(psi: Callable, B, test_fields: Iterable, bound_factor: float = 0.0,
                          atol: float = 1e-12) -> RepresentationReport:
    """Compare ``ψ(u)`` with ``Σ_x B(x, u_x)·μ(x)`` on test fields.

    A field passes when the discrepancy is at most
    ``bound_factor·ψ(u) + atol``.  For the default ladder and an integrand of
    degree ``q`` the natural factor is ``1 − λ_M^q``.  Infinite values on both
    sides count as agreement.
    """
    worst, excess, witness, count = 0.0, -INF, None, 0
    for u in test_fields:
        a = np.asarray(u, dtype=float)
        p = float(psi(a))
        r = B.integral(a)
        if math.isinf(p) and math.isinf(r):
            d = 0.0
            allowed = 0.0
        else:
            d = abs(p - r) if math.isfinite(p) and math.isfinite(r) else INF
            allowed = bound_factor * p + atol if math.isfinite(p) else atol
        count += 1
        if d > worst:
            worst = d
        if d - allowed > excess:
            excess = d - allowed
            witness = a.tolist()
    if count == 0:
        excess = 0.0
    return RepresentationReport(count, worst, excess, float(bound_factor), float(atol), witness)


def decompose_signed(psi_full: Callable, n: int) -> tuple[PsiOracle, PsiOracle]:
    """``ψ_+(f) = ψ(f)`` and ``ψ_-(f) = ψ(−f)`` on the positive cone."""
    plus = PsiOracle(lambda f: psi_full(f), n, "psi_plus")
    minus = PsiOracle(lambda f: psi_full(-f), n, "psi_minus")
    return plus, minus


def reconstruct_signed(psi_full: Callable, n: int, targets: Iterable, m: int = 20) -> GluedB:
    """Glued reconstruction from ladders on the positive and negative parts of ``targets``."""
    targets = [np.asarray(u, dtype=float) for u in targets]
    plus, minus = decompose_signed(psi_full, n)
    dict_p = Dictionary.from_ladder([np.maximum(u, 0) for u in targets], m)
    dict_m = Dictionary.from_ladder([np.maximum(-u, 0) for u in targets], m)
    mu = common_reference_measure([(plus, dict_p), (minus, dict_m)])
    return GluedB(reconstruct_B(plus, dict_p, mu), reconstruct_B(minus, dict_m, mu))
