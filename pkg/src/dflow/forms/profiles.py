"""Scalar integrands ``B(x, ·)``, per-vertex profiles and vertex measures.

Every integrand is bi-monotone (nonincreasing on ``(-∞, 0)``, nondecreasing on
``(0, ∞)``), lower semicontinuous, vanishes at ``0`` and may take the value
``+inf``.  The ``+inf`` region is always the complement of a closed interval
``box = (lo, hi)`` with ``lo <= 0 <= hi``; inside the box the integrand is
finite.

Extended arithmetic follows IEEE floats with one override: a zero measure
weight annihilates an infinite integrand value (``0 · ∞ = 0``), as in
Lebesgue integration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..errors import NotConvexError, ValidationError

__all__ = [
    "ZeroB",
    "PowerLaw",
    "Well",
    "Table",
    "BProfile",
    "VertexMeasure",
    "integrand_from_dict",
    "weighted_integral",
    "power_delta",
]

INF = math.inf
EPS = float(np.finfo(float).eps)


def power_delta(a: np.ndarray, h: np.ndarray, q) -> tuple[np.ndarray, np.ndarray]:
    """``|a + h|^q − |a|^q`` without cancellation, and a rounding error bound.

    Where ``a`` and ``a + h`` share a sign and ``|h| <= |a|`` the difference
    is ``|a|^q·expm1(q·log1p(h/a))``; elsewhere there is no cancellation to
    avoid and it is formed directly.
    """
    a = np.asarray(a, dtype=float)
    h = np.asarray(h, dtype=float)
    b = a + h
    same = (a != 0) & (a * b > 0) & (np.abs(h) <= np.abs(a))
    ratio = np.where(same, h, 0.0) / np.where(same, a, 1.0)  # |ratio| <= 1
    acc = np.abs(a) ** q * np.expm1(q * np.log1p(ratio))
    direct = np.abs(b) ** q - np.abs(a) ** q
    out = np.where(same, acc, direct)
    err = np.where(same, 8 * EPS * np.abs(acc), 4 * EPS * (np.abs(b) ** q + np.abs(a) ** q))
    return out, err


class Integrand:
    """Interface shared by the scalar integrands."""

    #: a Newton step on this term is well defined: piecewise C^2 with bounded
    #: curvature, derivative jumps only at the points listed in ``kinks``
    newton_ok: bool = True

    @property
    def box(self) -> tuple[float, float]:
        return (-INF, INF)

    @property
    def kinks(self) -> tuple[float, ...]:
        """Interior points of the box where the derivative may jump."""
        return ()

    @property
    def is_convex(self) -> bool:
        return True

    @property
    def is_symmetric(self) -> bool:
        raise NotImplementedError

    def value(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def right_derivative(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def left_derivative(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def second_derivative(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def delta(self, a: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``B(a + h) − B(a)`` and a rounding error bound, for points in the box."""
        va, vb = self.value(a), self.value(a + h)
        return vb - va, 4 * EPS * (np.abs(va) + np.abs(vb))

    def __call__(self, s):
        out = self.value(np.asarray(s, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ZeroB(Integrand):
    """``B ≡ 0``."""

    @property
    def is_symmetric(self) -> bool:
        return True

    def value(self, s):
        return np.zeros_like(s, dtype=float)

    def right_derivative(self, s):
        return np.zeros_like(s, dtype=float)

    left_derivative = right_derivative
    second_derivative = right_derivative

    def delta(self, a, h):
        z = np.zeros_like(a, dtype=float)
        return z, z

    def to_dict(self) -> dict:
        return {"type": "zero"}


@dataclass(frozen=True)
class PowerLaw(Integrand):
    """``B(s) = c_plus·s^q`` for ``s >= 0`` and ``c_minus·|s|^q`` for ``s < 0``."""

    c_plus: float = 1.0
    c_minus: float = 1.0
    q: float = 2.0

    def __post_init__(self):
        if not (self.c_plus >= 0 and self.c_minus >= 0):
            raise ValidationError("PowerLaw coefficients must be nonnegative")
        if not (self.q >= 1 and math.isfinite(self.q)):
            raise ValidationError(f"PowerLaw exponent must satisfy q >= 1, got {self.q}")
        object.__setattr__(self, "c_plus", float(self.c_plus))
        object.__setattr__(self, "c_minus", float(self.c_minus))
        object.__setattr__(self, "q", float(self.q))

    @property
    def newton_ok(self) -> bool:
        return self.q >= 2 or self.q == 1

    @property
    def kinks(self) -> tuple[float, ...]:
        return (0.0,) if self.q == 1 and (self.c_plus > 0 or self.c_minus > 0) else ()

    @property
    def is_symmetric(self) -> bool:
        return self.c_plus == self.c_minus

    def _coef(self, s):
        return np.where(s >= 0, self.c_plus, self.c_minus)

    def value(self, s):
        return self._coef(s) * np.abs(s) ** self.q

    def delta(self, a, h):
        d, err = power_delta(a, h, self.q)
        same = a * (a + h) > 0
        coef = self._coef(a)
        direct, derr = Integrand.delta(self, a, h)
        return np.where(same, coef * d, direct), np.where(same, coef * err, derr)

    def right_derivative(self, s):
        q = self.q
        if q == 1:
            return np.where(s >= 0, self.c_plus, -self.c_minus).astype(float)
        mag = q * np.abs(s) ** (q - 1)
        return np.where(s >= 0, self.c_plus * mag, -self.c_minus * mag)

    def left_derivative(self, s):
        q = self.q
        if q == 1:
            return np.where(s > 0, self.c_plus, -self.c_minus).astype(float)
        return self.right_derivative(s)

    def second_derivative(self, s):
        q = self.q
        if q == 1:
            return np.zeros_like(s, dtype=float)
        if q == 2:
            # semismooth choice at s = 0
            return np.where(s > 0, 2 * self.c_plus,
                            np.where(s < 0, 2 * self.c_minus, 2 * max(self.c_plus, self.c_minus)))
        with np.errstate(divide="ignore"):
            mag = q * (q - 1) * np.abs(s) ** (q - 2)
        return self._coef(s) * mag

    def to_dict(self) -> dict:
        return {"type": "power_law", "c_plus": self.c_plus, "c_minus": self.c_minus, "q": self.q}


@dataclass(frozen=True)
class Well(Integrand):
    """``0`` on ``[a, b]`` and ``+inf`` outside; ``a = b = 0`` is a Dirichlet condition."""

    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if not (self.a <= 0 <= self.b):
            raise ValidationError(f"Well needs a <= 0 <= b, got [{self.a}, {self.b}]")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))

    @property
    def box(self):
        return (self.a, self.b)

    @property
    def is_symmetric(self) -> bool:
        return self.a == -self.b

    def value(self, s):
        return np.where((s >= self.a) & (s <= self.b), 0.0, INF)

    def right_derivative(self, s):
        return np.zeros_like(s, dtype=float)

    left_derivative = right_derivative
    second_derivative = right_derivative

    def to_dict(self) -> dict:
        return {"type": "well", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Table(Integrand):
    """Tabulated integrand, ``+inf`` outside the hull of ``points`` and ``0``.

    ``interpolation="linear"`` interpolates between breakpoints; the data must
    vanish at ``0`` and be bi-monotone.  ``interpolation="step"`` is the
    left-continuous step function

        B(s) = max{values[k] : 0 <= points[k] < s}   (s > 0)
        B(s) = max{values[k] : s < points[k] <= 0}   (s < 0)

    with ``B(0) = 0`` (empty maximum), so at a jump the value is the one from
    the side nearer ``0``.  Step tables are not convex in general.
    """

    points: tuple = ()
    values: tuple = ()
    interpolation: str = "linear"
    _pos: tuple = field(default=(), repr=False, compare=False)
    _neg: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if pts.ndim != 1 or pts.shape != vals.shape or pts.size == 0:
            raise ValidationError("Table needs equally long, non-empty points and values")
        if not np.all(np.diff(pts) > 0):
            raise ValidationError("Table points must be strictly increasing")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValidationError("Table points and values must be finite, values nonnegative")
        if self.interpolation not in ("linear", "step"):
            raise ValidationError(f"unknown Table interpolation {self.interpolation!r}")
        object.__setattr__(self, "points", tuple(pts.tolist()))
        object.__setattr__(self, "values", tuple(vals.tolist()))
        if self.interpolation == "linear":
            if not (pts[0] <= 0 <= pts[-1]):
                raise ValidationError("linear Table points must bracket 0")
            if float(np.interp(0.0, pts, vals)) != 0.0:
                raise ValidationError("Table must vanish at s = 0")
            knots = np.union1d(pts, [0.0])
            kv = np.interp(knots, pts, vals)
            left, right = kv[knots <= 0], kv[knots >= 0]
            if np.any(np.diff(left) > 0) or np.any(np.diff(right) < 0):
                raise ValidationError("Table values are not bi-monotone")
        else:
            pos = pts >= 0
            neg = pts <= 0
            order_pos = np.argsort(pts[pos])
            tp = pts[pos][order_pos]
            lp = np.maximum.accumulate(vals[pos][order_pos]) if tp.size else tp
            tn = -pts[neg]
            order_neg = np.argsort(tn)
            tn = tn[order_neg]
            ln = np.maximum.accumulate(vals[neg][order_neg]) if tn.size else tn
            object.__setattr__(self, "_pos", (tuple(tp.tolist()), tuple(lp.tolist())))
            object.__setattr__(self, "_neg", (tuple(tn.tolist()), tuple(ln.tolist())))

    @property
    def box(self):
        return (min(self.points[0], 0.0), max(self.points[-1], 0.0))

    @property
    def newton_ok(self) -> bool:
        return self.interpolation == "linear"

    @property
    def kinks(self) -> tuple[float, ...]:
        if self.interpolation == "step":
            return ()
        lo, hi = self.box
        return tuple(p for p in self.points if lo < p < hi)

    @property
    def is_convex(self) -> bool:
        if self.interpolation == "step":
            return all(v == 0 for v in self.values)
        pts = np.asarray(self.points)
        slopes = np.diff(np.asarray(self.values)) / np.diff(pts)
        return bool(np.all(np.diff(slopes) >= -1e-14))

    @property
    def is_symmetric(self) -> bool:
        pts = np.asarray(self.points)
        if not np.allclose(pts, -pts[::-1], rtol=0, atol=0):
            return False
        return self.values == self.values[::-1]

    def _step(self, s):
        out = np.zeros_like(s, dtype=float)
        for side, sel in ((self._pos, s > 0), (self._neg, s < 0)):
            thr, lev = np.asarray(side[0]), np.asarray(side[1])
            if thr.size == 0 or not np.any(sel):
                continue
            k = np.searchsorted(thr, np.abs(s[sel]), side="left") - 1
            out[sel] = np.where(k >= 0, lev[np.maximum(k, 0)], 0.0)
        return out

    def value(self, s):
        lo, hi = self.box
        inside = (s >= lo) & (s <= hi)
        if self.interpolation == "linear":
            finite = np.interp(s, self.points, self.values)
        else:
            finite = self._step(s)
        return np.where(inside, finite, INF)

    def _slopes(self):
        pts = np.asarray(self.points)
        return pts, np.diff(np.asarray(self.values)) / np.diff(pts)

    def right_derivative(self, s):
        if self.interpolation == "step":
            raise NotConvexError("step tables have no derivative")
        pts, slopes = self._slopes()
        if slopes.size == 0:
            return np.zeros_like(s, dtype=float)
        k = np.clip(np.searchsorted(pts, s, side="right") - 1, 0, slopes.size - 1)
        return slopes[k]

    def left_derivative(self, s):
        if self.interpolation == "step":
            raise NotConvexError("step tables have no derivative")
        pts, slopes = self._slopes()
        if slopes.size == 0:
            return np.zeros_like(s, dtype=float)
        k = np.clip(np.searchsorted(pts, s, side="left") - 1, 0, slopes.size - 1)
        return slopes[k]

    def second_derivative(self, s):
        return np.zeros_like(s, dtype=float)

    def delta(self, a, h):
        if self.interpolation == "step":
            return Integrand.delta(self, a, h)
        pts, slopes = self._slopes()
        b = a + h
        ka = np.searchsorted(pts, a, side="right")
        kb = np.searchsorted(pts, b, side="right")
        # both ends inside one linear piece: the difference is slope·h
        same = (ka == kb) & (ka >= 1) & (ka <= slopes.size)
        lin = slopes[np.clip(ka - 1, 0, max(slopes.size - 1, 0))] * h if slopes.size else np.zeros_like(h)
        direct, derr = Integrand.delta(self, a, h)
        return np.where(same, lin, direct), np.where(same, 4 * EPS * np.abs(lin), derr)

    def to_dict(self) -> dict:
        return {"type": "table", "points": list(self.points), "values": list(self.values),
                "interpolation": self.interpolation}


def integrand_from_dict(d: dict) -> Integrand:
    kind = d.get("type")
    args = {k: v for k, v in d.items() if k != "type"}
    try:
        if kind == "zero":
            return ZeroB()
        if kind == "power_law":
            return PowerLaw(**args)
        if kind == "well":
            return Well(**args)
        if kind == "table":
            return Table(points=tuple(args.pop("points")), values=tuple(args.pop("values")), **args)
    except TypeError as exc:
        raise ValidationError(f"bad {kind} integrand fields: {exc}") from None
    raise ValidationError(f"unknown integrand type {kind!r}")


class BProfile:
    """One integrand per vertex.

    Parameters
    ----------
    integrands : sequence of Integrand
        ``integrands[x]`` is ``B(x, ·)``.
    """

    def __init__(self, integrands: Sequence[Integrand]):
        self.integrands = tuple(integrands)
        if not self.integrands:
            raise ValidationError("a profile needs at least one vertex")
        groups: dict[Integrand, list[int]] = {}
        for x, b in enumerate(self.integrands):
            if not isinstance(b, Integrand):
                raise ValidationError(f"vertex {x}: {b!r} is not an integrand")
            groups.setdefault(b, []).append(x)
        self._groups = tuple((b, np.array(ix, dtype=np.intp)) for b, ix in groups.items())

    @classmethod
    def uniform(cls, n: int, integrand: Integrand) -> "BProfile":
        return cls([integrand] * n)

    @classmethod
    def on(cls, n: int, vertices: Iterable[int], integrand: Integrand,
           default: Integrand | None = None) -> "BProfile":
        """``integrand`` on ``vertices`` and ``default`` (``ZeroB``) elsewhere."""
        default = default or ZeroB()
        chosen = set(int(v) for v in vertices)
        return cls([integrand if x in chosen else default for x in range(n)])

    @property
    def n(self) -> int:
        return len(self.integrands)

    @property
    def groups(self) -> tuple[tuple[Integrand, np.ndarray], ...]:
        """``(integrand, vertex indices)`` pairs, one per distinct integrand."""
        return self._groups

    @property
    def is_symmetric(self) -> bool:
        return all(b.is_symmetric for b, _ in self._groups)

    @property
    def is_convex(self) -> bool:
        return all(b.is_convex for b, _ in self._groups)

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.empty(self.n)
        hi = np.empty(self.n)
        for b, ix in self._groups:
            lo[ix], hi[ix] = b.box
        return lo, hi

    def values(self, s: np.ndarray) -> np.ndarray:
        """Vector of ``B(x, s_x)``."""
        s = np.asarray(s, dtype=float)
        out = np.empty(self.n)
        for b, ix in self._groups:
            out[ix] = b.value(s[ix])
        return out

    def _apply(self, name: str, s: np.ndarray) -> np.ndarray:
        out = np.empty(self.n)
        for b, ix in self._groups:
            out[ix] = getattr(b, name)(s[ix])
        return out

    def delta(self, a: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-vertex ``B(x, a + h) − B(x, a)`` with rounding error bounds."""
        d = np.empty(self.n)
        err = np.empty(self.n)
        for b, ix in self._groups:
            d[ix], err[ix] = b.delta(a[ix], h[ix])
        return d, err

    def right_derivative(self, s):
        return self._apply("right_derivative", s)

    def left_derivative(self, s):
        return self._apply("left_derivative", s)

    def second_derivative(self, s):
        return self._apply("second_derivative", s)

    def __call__(self, x: int, s: float) -> float:
        return self.integrands[x](s)

    def to_dict(self) -> dict:
        if len(self._groups) == 1:
            return self.integrands[0].to_dict()
        return {"per_vertex": [b.to_dict() for b in self.integrands]}

    @classmethod
    def from_dict(cls, d: dict, n: int) -> "BProfile":
        if "per_vertex" in d:
            items = d["per_vertex"]
            if len(items) != n:
                raise ValidationError(f"profile lists {len(items)} vertices, space has {n}")
            return cls([integrand_from_dict(x) for x in items])
        if "on" in d:
            if "integrand" not in d:
                raise ValidationError("a profile with 'on' needs an 'integrand'")
            default = integrand_from_dict(d["default"]) if "default" in d else None
            return cls.on(n, d["on"], integrand_from_dict(d["integrand"]), default)
        return cls.uniform(n, integrand_from_dict(d))

    def __eq__(self, other) -> bool:
        return isinstance(other, BProfile) and other.integrands == self.integrands

    def __hash__(self) -> int:
        return hash(self.integrands)

    def __repr__(self) -> str:
        kinds = ", ".join(f"{b!r}@{len(ix)}" for b, ix in self._groups)
        return f"BProfile({kinds})"


class VertexMeasure:
    """Nonnegative finite mass per vertex."""

    __slots__ = ("masses",)

    def __init__(self, masses: Sequence[float]):
        m = np.array(masses, dtype=float)
        if m.ndim != 1 or not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValidationError("vertex measure masses must be finite and nonnegative")
        m.setflags(write=False)
        self.masses = m

    @classmethod
    def on(cls, n: int, vertices: Iterable[int], value: float = 1.0) -> "VertexMeasure":
        m = np.zeros(n)
        m[list(vertices)] = value
        return cls(m)

    @property
    def n(self) -> int:
        return int(self.masses.size)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(np.flatnonzero(self.masses > 0).tolist())

    def total(self) -> float:
        return float(self.masses.sum())

    def __call__(self, vertices: Iterable[int]) -> float:
        return float(self.masses[list(vertices)].sum())

    def __add__(self, other: "VertexMeasure") -> "VertexMeasure":
        return VertexMeasure(self.masses + other.masses)

    def __eq__(self, other) -> bool:
        return isinstance(other, VertexMeasure) and np.array_equal(self.masses, other.masses)

    def __hash__(self) -> int:
        return hash(self.masses.tobytes())

    def __repr__(self) -> str:
        return f"VertexMeasure({self.masses.tolist()})"


def weighted_integral(values: np.ndarray, weights: np.ndarray) -> float:
    """``Σ_x weights_x · values_x`` with ``0 · ∞ = 0``."""
    charged = weights > 0
    if not np.any(charged):
        return 0.0
    return float(np.dot(weights[charged], values[charged]))
