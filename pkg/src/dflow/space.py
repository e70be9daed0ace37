"""Finite weighted measure spaces, fields on them, and lattice operations.

A :class:`FiniteSpace` is the discrete pair ``(X, m)``: ``n`` vertices with
strictly positive masses, an optional weighted edge list (used by graph
energies) and an optional set of boundary vertices.  Every subset of vertices
is open and compact in the discrete topology, so "``u >= 1`` on a
neighbourhood of ``A``" simply means "``u >= 1`` on ``A``".

A :class:`Field` is an element of ``L^2(X, m)``: a finite real vector tied to
its space.  Binary operations refuse fields from different spaces.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import SpaceMismatchError, ValidationError

__all__ = [
    "FiniteSpace",
    "Field",
    "VertexSet",
    "meet",
    "join",
    "truncate",
    "alpha_midpoint",
    "pos_part",
    "neg_part",
    "absolute",
    "sgn",
    "l2_norm",
    "l2_dist",
    "linf_norm",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


class FiniteSpace:
    """Vertex set with positive masses, weighted edges and boundary vertices.

    Parameters
    ----------
    masses : sequence of float
        Vertex masses; all must be strictly positive.
    edges : iterable of (i, j, weight), optional
        Undirected weighted edges.  Orientation is normalised to ``i < j``.
    boundary : iterable of int, optional
        Vertices carrying Dirichlet/Robin data in experiments.  They are
        ordinary vertices; constraints are imposed by functionals.
    """

    def __init__(self, masses: Sequence[float], edges: Iterable = (), boundary: Iterable[int] = ()):
        m = np.asarray(masses, dtype=float)
        if m.ndim != 1 or m.size == 0:
            raise ValidationError("masses must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise ValidationError("masses must be finite and strictly positive")
        n = m.size
        seen = set()
        heads, tails, weights = [], [], []
        for e in edges:
            if len(e) != 3:
                raise ValidationError(f"edge {e!r} is not a (i, j, weight) triple")
            i, j, w = int(e[0]), int(e[1]), float(e[2])
            if i == j:
                raise ValidationError(f"self-loop at vertex {i}")
            if i > j:
                i, j = j, i
            if i < 0 or j >= n:
                raise ValidationError(f"edge ({i}, {j}) has an index outside 0..{n - 1}")
            if not np.isfinite(w) or w <= 0:
                raise ValidationError(f"edge ({i}, {j}) has nonpositive weight {w}")
            if (i, j) in seen:
                raise ValidationError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))
            heads.append(i)
            tails.append(j)
            weights.append(w)
        bnd = sorted({int(b) for b in boundary})
        if bnd and (bnd[0] < 0 or bnd[-1] >= n):
            raise ValidationError("boundary vertex index out of range")

        self._masses = _readonly(m)
        self._heads = np.array(heads, dtype=np.intp)
        self._tails = np.array(tails, dtype=np.intp)
        self._weights = _readonly(np.array(weights, dtype=float))
        self._heads.setflags(write=False)
        self._tails.setflags(write=False)
        self._boundary = tuple(bnd)
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        self._key = hashlib.sha256(payload).hexdigest()

    # -- constructors -------------------------------------------------
    @classmethod
    def path(cls, n: int, weight: float = 1.0, mass: float | Sequence[float] = 1.0,
             boundary: str | Iterable[int] = "ends") -> "FiniteSpace":
        """Path graph ``0 - 1 - ... - n-1``; ``boundary="ends"`` marks both endpoints."""
        masses = np.broadcast_to(np.asarray(mass, dtype=float), (n,))
        edges = [(i, i + 1, weight) for i in range(n - 1)]
        bnd = (0, n - 1) if boundary == "ends" else tuple(boundary)
        return cls(masses, edges, bnd)

    @classmethod
    def cycle(cls, n: int, weight: float = 1.0, mass: float | Sequence[float] = 1.0) -> "FiniteSpace":
        masses = np.broadcast_to(np.asarray(mass, dtype=float), (n,))
        edges = [(i, (i + 1) % n, weight) for i in range(n)]
        return cls(masses, edges)

    @classmethod
    def from_dict(cls, data: dict) -> "FiniteSpace":
        allowed = {"n", "masses", "edges", "boundary"}
        extra = set(data) - allowed
        if extra:
            raise ValidationError(f"unknown space fields: {sorted(extra)}")
        if "masses" not in data:
            raise ValidationError("space description needs 'masses'")
        masses = data["masses"]
        if "n" in data and int(data["n"]) != len(masses):
            raise ValidationError(f"n={data['n']} does not match {len(masses)} masses")
        return cls(masses, data.get("edges", ()), data.get("boundary", ()))

    @classmethod
    def load(cls, path: str | Path) -> "FiniteSpace":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "masses": self._masses.tolist(),
            "edges": [[int(i), int(j), float(w)] for i, j, w in self.edges],
            "boundary": list(self._boundary),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    # -- accessors ----------------------------------------------------
    @property
    def n(self) -> int:
        return int(self._masses.size)

    @property
    def masses(self) -> np.ndarray:
        return self._masses

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self._heads.tolist(), self._tails.tolist(), self._weights.tolist()))

    @property
    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(heads, tails, weights)`` as read-only arrays."""
        return self._heads, self._tails, self._weights

    @property
    def n_edges(self) -> int:
        return int(self._weights.size)

    @property
    def boundary(self) -> tuple[int, ...]:
        return self._boundary

    @property
    def interior(self) -> tuple[int, ...]:
        b = set(self._boundary)
        return tuple(i for i in range(self.n) if i not in b)

    @property
    def key(self) -> str:
        """Content hash identifying the space."""
        return self._key

    def laplacian(self) -> np.ndarray:
        """Dense weighted graph Laplacian (Euclidean pairing)."""
        L = np.zeros((self.n, self.n))
        i, j, w = self.edge_arrays
        np.add.at(L, (i, i), w)
        np.add.at(L, (j, j), w)
        np.add.at(L, (i, j), -w)
        np.add.at(L, (j, i), -w)
        return L

    def field(self, values) -> "Field":
        return Field(self, values)

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.n))

    def constant(self, c: float) -> "Field":
        return Field(self, np.full(self.n, float(c)))

    def indicator(self, vertices: Iterable[int]) -> "Field":
        return Field(self, VertexSet(self, vertices).indicator())

    def __eq__(self, other) -> bool:
        return isinstance(other, FiniteSpace) and other._key == self._key

    def __hash__(self) -> int:
        return hash(self._key)

    def __repr__(self) -> str:
        return f"FiniteSpace(n={self.n}, edges={self.n_edges}, boundary={list(self._boundary)})"


class VertexSet:
    """A subset of the vertices of a space (every subset is open and compact)."""

    __slots__ = ("space", "indices")

    def __init__(self, space: FiniteSpace, vertices: Iterable[int] = ()):
        idx = sorted({int(v) for v in vertices})
        if idx and (idx[0] < 0 or idx[-1] >= space.n):
            raise ValidationError(f"vertex index out of range 0..{space.n - 1}")
        self.space = space
        self.indices = tuple(idx)

    def mask(self) -> np.ndarray:
        out = np.zeros(self.space.n, dtype=bool)
        out[list(self.indices)] = True
        return out

    def indicator(self) -> np.ndarray:
        return self.mask().astype(float)

    def __iter__(self):
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, v) -> bool:
        return int(v) in self.indices

    def _other(self, other) -> "VertexSet":
        if isinstance(other, VertexSet):
            if other.space != self.space:
                raise SpaceMismatchError("vertex sets live on different spaces")
            return other
        return VertexSet(self.space, other)

    def __or__(self, other) -> "VertexSet":
        return VertexSet(self.space, set(self.indices) | set(self._other(other).indices))

    def __and__(self, other) -> "VertexSet":
        return VertexSet(self.space, set(self.indices) & set(self._other(other).indices))

    def __sub__(self, other) -> "VertexSet":
        return VertexSet(self.space, set(self.indices) - set(self._other(other).indices))

    def __le__(self, other) -> bool:
        return set(self.indices) <= set(self._other(other).indices)

    def isdisjoint(self, other) -> bool:
        return not (set(self.indices) & set(self._other(other).indices))

    def __eq__(self, other) -> bool:
        return isinstance(other, VertexSet) and other.space == self.space and other.indices == self.indices

    def __hash__(self) -> int:
        return hash((self.space.key, self.indices))

    def __repr__(self) -> str:
        return f"VertexSet({list(self.indices)})"


class Field:
    """A real function on the vertices of a space, i.e. an element of L^2(X, m).

    Values are stored in a read-only float array.  Arithmetic with scalars and
    with same-space fields returns new fields.
    """

    __slots__ = ("space", "values")
    __array_priority__ = 100

    def __init__(self, space: FiniteSpace, values):
        v = np.asarray(values, dtype=float)
        if v.shape != (space.n,):
            raise ValidationError(f"field of shape {v.shape} on a space with {space.n} vertices")
        if not np.all(np.isfinite(v)):
            raise ValidationError("field entries must be finite")
        self.space = space
        self.values = _readonly(v)

    def _coerce(self, other):
        if isinstance(other, Field):
            if other.space != self.space:
                raise SpaceMismatchError("fields live on different spaces")
            return other.values
        return other

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self) -> int:
        return self.space.n

    def __getitem__(self, i):
        return self.values[i]

    def __add__(self, other):
        return Field(self.space, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.space, self.values - self._coerce(other))

    def __rsub__(self, other):
        return Field(self.space, self._coerce(other) - self.values)

    def __mul__(self, other):
        return Field(self.space, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.space, self.values / self._coerce(other))

    def __neg__(self):
        return Field(self.space, -self.values)

    def __abs__(self):
        return Field(self.space, np.abs(self.values))

    def __eq__(self, other) -> bool:
        return isinstance(other, Field) and other.space == self.space and np.array_equal(other.values, self.values)

    __hash__ = None

    def allclose(self, other, atol: float = 0.0, rtol: float = 0.0) -> bool:
        return bool(np.allclose(self.values, self._coerce(other), atol=atol, rtol=rtol))

    def tolist(self) -> list[float]:
        return self.values.tolist()

    def __repr__(self) -> str:
        return f"Field({np.array2string(self.values, precision=6, separator=', ')})"


def _pair(u: Field, v: Field) -> tuple[FiniteSpace, np.ndarray, np.ndarray]:
    if u.space != v.space:
        raise SpaceMismatchError("fields live on different spaces")
    return u.space, u.values, v.values


def meet(u: Field, v: Field) -> Field:
    """Pointwise minimum ``u ∧ v``."""
    s, a, b = _pair(u, v)
    return Field(s, np.minimum(a, b))


def join(u: Field, v: Field) -> Field:
    """Pointwise maximum ``u ∨ v``."""
    s, a, b = _pair(u, v)
    return Field(s, np.maximum(a, b))


def truncate(u: Field, c: float) -> Field:
    """Clamp ``u`` into ``[-c, c]``."""
    if c < 0:
        raise ValueError(f"truncation level must be nonnegative, got {c}")
    return Field(u.space, np.clip(u.values, -c, c))


def alpha_midpoint_values(d: np.ndarray, alpha: float) -> np.ndarray:
    """``½((d + α)_+ − (d − α)_−)`` for a difference array ``d``, with ``x_− = max(−x, 0)``."""
    return 0.5 * (np.maximum(d + alpha, 0.0) - np.maximum(alpha - d, 0.0))


def alpha_midpoint(u: Field, v: Field, alpha: float) -> Field:
    """The shift ``w`` used by the L∞-contraction inequality of a Dirichlet form.

    ``w = ½((u − v + α)_+ − (u − v − α)_−)``.  Where ``|u − v| <= α`` this is
    ``u − v`` itself; elsewhere it is ``(u − v ± α)/2``.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    s, a, b = _pair(u, v)
    return Field(s, alpha_midpoint_values(a - b, alpha))


def pos_part(u: Field) -> Field:
    return Field(u.space, np.maximum(u.values, 0.0))


def neg_part(u: Field) -> Field:
    """``u_− = max(−u, 0)``, so that ``u = u_+ − u_−``."""
    return Field(u.space, np.maximum(-u.values, 0.0))


def absolute(u: Field) -> Field:
    return Field(u.space, np.abs(u.values))


def sgn(u: Field) -> Field:
    """Pointwise sign with ``sgn(0) = 0``."""
    return Field(u.space, np.sign(u.values))


def l2_norm(u: Field) -> float:
    """Mass-weighted norm ``sqrt(Σ m_i u_i²)``."""
    return float(np.sqrt(np.dot(u.space.masses, u.values ** 2)))


def l2_dist(u: Field, v: Field) -> float:
    s, a, b = _pair(u, v)
    return float(np.sqrt(np.dot(s.masses, (a - b) ** 2)))


def linf_norm(u: Field) -> float:
    return float(np.max(np.abs(u.values))) if u.space.n else 0.0
