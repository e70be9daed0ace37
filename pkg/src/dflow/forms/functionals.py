"""Convex functionals ``L^2(X, m) -> [0, ∞]`` on a finite space.

The variants form a small tree:

* :class:`Zero`
* :class:`Quadratic` -- ``(scale/2)·‖u‖²``
* :class:`GraphPEnergy` -- ``Σ_e w_e |u_i − u_j|^{p_e} / p_e``
* :class:`Perturbed` -- ``base(u) + Σ_x B(x, u_x)·μ_x``
* :class:`DirichletRestricted` -- ``base(u)`` if ``u = 0`` on a vertex set, else ``+inf``

Each tree is flattened once into a :class:`Compiled` form (smooth energy,
separable integrand terms and a box of hard constraints) that evaluation,
gradients and the resolvent solver share.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Union

import numpy as np
from scipy import sparse

from ..errors import NotDifferentiableError, SpaceMismatchError, ValidationError
from ..space import Field, FiniteSpace, VertexSet
from .profiles import BProfile, PowerLaw, VertexMeasure, Well, ZeroB, weighted_integral

__all__ = [
    "FunctionalSpec",
    "Zero",
    "Quadratic",
    "GraphPEnergy",
    "Perturbed",
    "DirichletRestricted",
    "Compiled",
    "evaluate",
    "gradient",
    "functional_from_dict",
    "perturbation",
    "E1",
]

INF = math.inf
ArrayOrField = Union[np.ndarray, Field, Sequence[float]]


class Compiled:
    """Flattened representation of a functional tree.

    ``F(u) = (quad/2)·Σ m u² + Σ_e w_e |Δ_e u|^{p_e}/p_e + Σ_k Σ_x μ_k(x) B_k(x, u_x)``
    on the box ``lo <= u <= hi`` and ``+inf`` outside it.
    """

    def __init__(self, space: FiniteSpace):
        self.space = space
        self.masses = space.masses
        self.quad = 0.0
        self.heads = np.zeros(0, dtype=np.intp)
        self.tails = np.zeros(0, dtype=np.intp)
        self.weights = np.zeros(0)
        self.exps = np.zeros(0)
        self.terms: list[tuple[BProfile, np.ndarray]] = []
        self.lo = np.full(space.n, -INF)
        self.hi = np.full(space.n, INF)

    # -- assembly -----------------------------------------------------
    def add_edges(self, exps: np.ndarray) -> None:
        i, j, w = self.space.edge_arrays
        self.heads = np.concatenate([self.heads, i])
        self.tails = np.concatenate([self.tails, j])
        self.weights = np.concatenate([self.weights, w])
        self.exps = np.concatenate([self.exps, exps])

    def add_term(self, profile: BProfile, mu: np.ndarray) -> None:
        # restrict attention to charged vertices; 0·B = 0 even where B = ∞
        charged = mu > 0
        self.terms.append((profile, np.where(charged, mu, 0.0)))
        lo, hi = profile.box()
        self.lo = np.where(charged, np.maximum(self.lo, lo), self.lo)
        self.hi = np.where(charged, np.minimum(self.hi, hi), self.hi)

    def constrain_zero(self, mask: np.ndarray) -> None:
        self.lo = np.where(mask, np.maximum(self.lo, 0.0), self.lo)
        self.hi = np.where(mask, np.minimum(self.hi, 0.0), self.hi)

    # -- structure queries -------------------------------------------
    @cached_property
    def newton_ok(self) -> bool:
        if np.any(self.exps < 2):
            return False
        for profile, mu in self.terms:
            for b, ix in profile.groups:
                if np.any(mu[ix] > 0) and not b.newton_ok:
                    return False
        return True

    @cached_property
    def separable_convex(self) -> bool:
        for profile, mu in self.terms:
            for b, ix in profile.groups:
                if np.any(mu[ix] > 0) and not b.is_convex:
                    return False
        return True

    @cached_property
    def linear(self) -> bool:
        """True when the resolvent is a linear map (quadratic energy, zero-or-free boxes)."""
        if np.any(self.exps != 2):
            return False
        for profile, mu in self.terms:
            for b, ix in profile.groups:
                if not np.any(mu[ix] > 0):
                    continue
                if isinstance(b, ZeroB):
                    continue
                if isinstance(b, PowerLaw) and b.q == 2 and b.c_plus == b.c_minus:
                    continue
                if isinstance(b, Well) and b.a == 0 and b.b == 0:
                    continue
                return False
        boxed = np.isfinite(self.lo) | np.isfinite(self.hi)
        return bool(np.all(~boxed | ((self.lo == 0) & (self.hi == 0))))

    @cached_property
    def fixed(self) -> np.ndarray:
        return self.lo == self.hi

    @cached_property
    def kink_table(self) -> np.ndarray:
        """``(n, k)`` array of derivative breakpoints per vertex, padded with NaN."""
        per_vertex: list[set] = [set() for _ in range(self.space.n)]
        for profile, mu in self.terms:
            for b, ix in profile.groups:
                for x in ix[mu[ix] > 0]:
                    per_vertex[x].update(b.kinks)
        width = max((len(k) for k in per_vertex), default=0)
        table = np.full((self.space.n, width), np.nan)
        for x, ks in enumerate(per_vertex):
            table[x, :len(ks)] = sorted(ks)
        return table

    # -- evaluation ---------------------------------------------------
    def in_box(self, u: np.ndarray) -> bool:
        return bool(np.all(u >= self.lo) and np.all(u <= self.hi))

    def project(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.lo, self.hi)

    def smooth_value(self, u: np.ndarray) -> float:
        val = 0.5 * self.quad * float(np.dot(self.masses, u * u))
        if self.weights.size:
            d = np.abs(u[self.heads] - u[self.tails])
            val += float(np.sum(self.weights * d ** self.exps / self.exps))
        return val

    def separable_value(self, u: np.ndarray) -> float:
        total = 0.0
        for profile, mu in self.terms:
            total += weighted_integral(profile.values(u), mu)
        return total

    def value(self, u: np.ndarray) -> float:
        if not self.in_box(u):
            return INF
        return self.smooth_value(u) + self.separable_value(u)

    def edge_diffs(self, u: np.ndarray) -> np.ndarray:
        return u[self.heads] - u[self.tails]

    def smooth_grad(self, u: np.ndarray) -> np.ndarray:
        """Euclidean gradient of the smooth part."""
        g = self.quad * self.masses * u
        if self.weights.size:
            d = self.edge_diffs(u)
            flux = self.weights * np.sign(d) * np.abs(d) ** (self.exps - 1)
            g = g + np.bincount(self.heads, flux, minlength=u.size) \
                - np.bincount(self.tails, flux, minlength=u.size)
        return g

    def edge_curvature(self, u: np.ndarray) -> np.ndarray:
        d = np.abs(self.edge_diffs(u))
        with np.errstate(divide="ignore"):
            return self.weights * (self.exps - 1) * d ** (self.exps - 2)

    def separable_grad(self, u: np.ndarray, side: str = "right") -> np.ndarray:
        g = np.zeros(u.size)
        for profile, mu in self.terms:
            d = profile.right_derivative(u) if side == "right" else profile.left_derivative(u)
            g += np.where(mu > 0, mu * d, 0.0)
        return g

    def separable_curvature(self, u: np.ndarray) -> np.ndarray:
        h = np.zeros(u.size)
        for profile, mu in self.terms:
            h += np.where(mu > 0, mu * profile.second_derivative(u), 0.0)
        return h

    def hessian(self, u: np.ndarray, lam: float, dense: bool):
        """``M + λ ∇²F(u)`` on the smooth/separable parts (Euclidean pairing)."""
        n = u.size
        diag = self.masses * (1.0 + lam * self.quad) + lam * self.separable_curvature(u)
        if self.weights.size:
            c = lam * self.edge_curvature(u)
            diag = diag + np.bincount(self.heads, c, minlength=n) + np.bincount(self.tails, c, minlength=n)
        if dense:
            H = np.diag(diag)
            if self.weights.size:
                np.add.at(H, (self.heads, self.tails), -c)
                np.add.at(H, (self.tails, self.heads), -c)
            return H
        rows = np.concatenate([np.arange(n), self.heads, self.tails]) if self.weights.size else np.arange(n)
        cols = np.concatenate([np.arange(n), self.tails, self.heads]) if self.weights.size else np.arange(n)
        data = np.concatenate([diag, -c, -c]) if self.weights.size else diag
        return sparse.csc_matrix((data, (rows, cols)), shape=(n, n))

    def linear_operator(self) -> np.ndarray:
        """Euclidean Hessian ``A`` of a linear spec, so that ``F(u) = ½ uᵀAu`` on the free set."""
        u0 = np.zeros(self.space.n)
        H = self.hessian(u0, 1.0, dense=True)
        return H - np.diag(self.masses)


class FunctionalSpec:
    """Base class of the functional tree; instances are immutable."""

    space: FiniteSpace

    def _build(self, c: Compiled) -> None:
        raise NotImplementedError

    @cached_property
    def compiled(self) -> Compiled:
        c = Compiled(self.space)
        self._build(c)
        return c

    @property
    def is_symmetric(self) -> bool:
        raise NotImplementedError

    @property
    def is_convex(self) -> bool:
        return self.compiled.separable_convex

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        """Hard constraints ``lo <= u <= hi`` outside which the functional is ``+inf``."""
        c = self.compiled
        return c.lo.copy(), c.hi.copy()

    def __call__(self, u: ArrayOrField) -> float:
        return evaluate(self, u)

    def to_dict(self) -> dict:
        raise NotImplementedError

    @cached_property
    def digest(self) -> str:
        payload = json.dumps({"space": self.space.key, "spec": self.to_dict()}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class Zero(FunctionalSpec):
    space: FiniteSpace

    def _build(self, c):
        pass

    @property
    def is_symmetric(self):
        return True

    def to_dict(self):
        return {"type": "zero"}


@dataclass(frozen=True, eq=False)
class Quadratic(FunctionalSpec):
    """``(scale/2)·‖u‖²_{L²(m)}``."""

    space: FiniteSpace
    scale: float = 1.0

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValidationError(f"Quadratic scale must be positive, got {self.scale}")

    def _build(self, c):
        c.quad += float(self.scale)

    @property
    def is_symmetric(self):
        return True

    def to_dict(self):
        return {"type": "quadratic", "scale": float(self.scale)}


@dataclass(frozen=True, eq=False)
class GraphPEnergy(FunctionalSpec):
    """``Σ_e w_e |u_i − u_j|^{p_e} / p_e`` over the space's edges.

    ``p`` is a single exponent or one exponent per edge, each in ``(1, ∞)``.
    """

    space: FiniteSpace
    p: Union[float, tuple] = 2.0

    def __post_init__(self):
        if np.ndim(self.p) != 0 and len(self.p) != self.space.n_edges:
            raise ValidationError(f"{len(self.p)} exponents for {self.space.n_edges} edges")
        exps = np.broadcast_to(np.asarray(self.p, dtype=float), (self.space.n_edges,))
        if np.any(~np.isfinite(exps)) or np.any(exps <= 1):
            raise ValidationError("graph energy exponents must satisfy 1 < p < inf")
        if np.ndim(self.p) != 0:
            object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        else:
            object.__setattr__(self, "p", float(self.p))

    @property
    def exponents(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.p, dtype=float), (self.space.n_edges,)).copy()

    def _build(self, c):
        c.add_edges(self.exponents)

    @property
    def is_symmetric(self):
        return True

    def to_dict(self):
        return {"type": "graph_p_energy", "p": list(self.p) if isinstance(self.p, tuple) else self.p}


@dataclass(frozen=True, eq=False)
class Perturbed(FunctionalSpec):
    """``base(u) + Σ_x B(x, u_x)·μ_x``."""

    base: FunctionalSpec
    profile: BProfile
    mu: VertexMeasure

    def __post_init__(self):
        n = self.base.space.n
        if self.profile.n != n or self.mu.n != n:
            raise ValidationError("profile and measure must have one entry per vertex")

    @property
    def space(self) -> FiniteSpace:
        return self.base.space

    def _build(self, c):
        self.base._build(c)
        c.add_term(self.profile, np.asarray(self.mu.masses))

    @property
    def is_symmetric(self):
        charged = self.mu.masses > 0
        return self.base.is_symmetric and all(
            b.is_symmetric for b, ix in self.profile.groups if np.any(charged[ix]))

    def to_dict(self):
        return {"type": "perturbed", "base": self.base.to_dict(),
                "profile": self.profile.to_dict(), "mu": self.mu.masses.tolist()}


@dataclass(frozen=True, eq=False)
class DirichletRestricted(FunctionalSpec):
    """``base(u)`` when ``u`` vanishes on ``vertices``, ``+inf`` otherwise."""

    base: FunctionalSpec
    vertices: tuple = ()

    def __post_init__(self):
        if isinstance(self.vertices, VertexSet):
            object.__setattr__(self, "vertices", self.vertices.indices)
        else:
            object.__setattr__(self, "vertices", VertexSet(self.base.space, self.vertices).indices)

    @property
    def space(self) -> FiniteSpace:
        return self.base.space

    def _build(self, c):
        self.base._build(c)
        mask = np.zeros(self.space.n, dtype=bool)
        mask[list(self.vertices)] = True
        c.constrain_zero(mask)

    @property
    def is_symmetric(self):
        return self.base.is_symmetric

    def to_dict(self):
        return {"type": "dirichlet_restricted", "base": self.base.to_dict(), "set": list(self.vertices)}


def as_values(F: FunctionalSpec | FiniteSpace, u: ArrayOrField) -> np.ndarray:
    """Raw values of ``u`` after checking it lives on ``F``'s space."""
    space = F if isinstance(F, FiniteSpace) else F.space
    if isinstance(u, Field):
        if u.space != space:
            raise SpaceMismatchError("field and functional live on different spaces")
        return u.values
    a = np.asarray(u, dtype=float)
    if a.shape != (space.n,):
        raise SpaceMismatchError(f"array of shape {a.shape} on a space with {space.n} vertices")
    return a


def evaluate(F: FunctionalSpec, u: ArrayOrField) -> float:
    """Exact value ``F(u)`` in ``[0, ∞]``."""
    return F.compiled.value(as_values(F, u))


def gradient(F: FunctionalSpec, u: ArrayOrField, pairing: str = "l2m") -> Field:
    """Gradient of ``F`` at a point of differentiability.

    Parameters
    ----------
    pairing : {"l2m", "euclidean"}
        ``"l2m"`` returns the Riesz representative in ``L²(m)``, i.e.
        ``M⁻¹ ∇_eucl F``; ``"euclidean"`` the plain coordinate gradient.

    Raises
    ------
    NotDifferentiableError
        If ``u`` is outside the open interior of the box of hard constraints
        or an integrand has a kink at ``u``.
    """
    c = F.compiled
    a = as_values(F, u)
    if np.any(a <= c.lo) or np.any(a >= c.hi):
        raise NotDifferentiableError("point is on or outside a hard constraint")
    right = c.separable_grad(a, "right")
    left = c.separable_grad(a, "left")
    if not np.allclose(right, left, rtol=0, atol=0):
        bad = np.flatnonzero(right != left).tolist()
        raise NotDifferentiableError(f"integrand kink at vertices {bad}")
    g = c.smooth_grad(a) + right
    if pairing == "euclidean":
        return Field(F.space, g)
    if pairing != "l2m":
        raise ValueError(f"unknown pairing {pairing!r}")
    return Field(F.space, g / F.space.masses)


def E1(E: FunctionalSpec, u: ArrayOrField) -> float:
    """``E_1(u) = ‖u‖²_{L²(m)} + E(u)``."""
    a = as_values(E, u)
    return float(np.dot(E.space.masses, a * a)) + evaluate(E, a)


def perturbation(F: FunctionalSpec, E: FunctionalSpec):
    """``ψ = F − E`` as a callable, ``+inf`` wherever ``F`` is infinite.

    The difference of two infinite values is taken to be ``+inf`` (outside
    ``D(F)`` the perturbation is defined to be infinite).
    """
    if F.space != E.space:
        raise SpaceMismatchError("F and E live on different spaces")

    def psi(u: ArrayOrField) -> float:
        a = as_values(F, u)
        f = evaluate(F, a)
        if math.isinf(f):
            return INF
        return f - evaluate(E, a)

    psi.space = F.space
    return psi


def _measure_from(d, space: FiniteSpace) -> VertexMeasure:
    if isinstance(d, dict):
        where = d.get("on", "boundary")
        verts = space.boundary if where == "boundary" else where
        return VertexMeasure.on(space.n, verts, float(d.get("value", 1.0)))
    if d == "boundary":
        return VertexMeasure.on(space.n, space.boundary, 1.0)
    if isinstance(d, str):
        raise ValidationError(f"unknown measure shorthand {d!r}")
    if len(d) != space.n:
        raise ValidationError(f"measure lists {len(d)} masses, space has {space.n}")
    return VertexMeasure(d)


def functional_from_dict(d: dict, space: FiniteSpace) -> FunctionalSpec:
    """Build a functional tree from its JSON description."""
    if not isinstance(d, dict) or "type" not in d:
        raise ValidationError(f"functional description needs a 'type': {d!r}")
    kind = d["type"]
    if kind == "zero":
        return Zero(space)
    if kind == "quadratic":
        return Quadratic(space, float(d.get("scale", 1.0)))
    if kind == "graph_p_energy":
        p = d.get("p", 2.0)
        return GraphPEnergy(space, tuple(p) if isinstance(p, list) else float(p))
    if kind == "perturbed":
        for key in ("base", "profile", "mu"):
            if key not in d:
                raise ValidationError(f"perturbed functional needs {key!r}")
        base = functional_from_dict(d["base"], space)
        profile = d["profile"]
        if isinstance(profile, dict) and profile.get("on") == "boundary":
            profile = dict(profile, on=list(space.boundary))
        return Perturbed(base, BProfile.from_dict(profile, space.n), _measure_from(d["mu"], space))
    if kind == "dirichlet_restricted":
        s = d.get("set", "boundary")
        verts = space.boundary if s == "boundary" else s
        return DirichletRestricted(functional_from_dict(d["base"], space), tuple(verts))
    raise ValidationError(f"unknown functional type {kind!r}")
