"""Resolvents ``u* = argmin ½‖u − v‖²_{L²(m)} + λ·F(u)``.

Three code paths share one contract (certified objective gap at most
``tol²``, hard constraints met exactly):

* ``"linear"``: quadratic energies with zero-or-free boxes.  The resolvent is
  a fixed matrix, factored once per ``(F, λ)``.
* ``"newton"``: projected Newton with an Armijo search, used when every term
  has a locally bounded second derivative away from finitely many kinks
  (edge exponents ``p >= 2``; integrands with ``q >= 2``, ``q = 1`` or linear
  tables).  Steps stop at the next kink so that optimal kink values are hit
  exactly.
* ``"fista"``: accelerated proximal gradient in the ``m``-weighted metric with
  backtracking and adaptive restart, followed by Newton polishing.  Separable
  integrands, including kinks and wells, are handled exactly by a
  one-dimensional prox per vertex.

The gap certificate uses strong convexity of the objective: if ``g`` is the
minimum-norm element of the subdifferential at ``u`` (box normal cone
included), then ``Φ(u) − min Φ ≤ ½ Σ_x g_x² / m_x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from ..errors import NotConvexError, ProxConvergenceError, ValidationError
from ..space import Field
from .functionals import Compiled, FunctionalSpec, as_values
from .profiles import power_delta

__all__ = ["ProxResult", "Resolvent", "prox", "prox_solve"]

EPS = np.finfo(float).eps
DENSE_LIMIT = 400
LINEAR_DENSE_LIMIT = 2000


@dataclass
class ProxResult:
    """Outcome of one resolvent solve.

    ``rounding_limited`` is set when ``tol²`` lies below what double precision
    can certify for this instance; the reported ``gap`` is then the certified
    bound actually achieved.
    """

    u: np.ndarray
    gap: float
    iterations: int
    method: str
    rounding_limited: bool = False


class Resolvent:
    """Reusable resolvent ``(I + λ∂F)^{-1}`` for a fixed functional and step.

    Parameters
    ----------
    F : FunctionalSpec
        Proper convex functional.
    lam : float
        Step ``λ > 0``.
    tol : float
        Target accuracy; the objective gap is driven below ``tol**2``.
    method : {"auto", "linear", "newton", "fista"}
    max_iter : int, optional
    lower, upper : array, optional
        Extra bounds intersected with the functional's own box.
    """

    def __init__(self, F: FunctionalSpec, lam: float, tol: float = 1e-10,
                 method: str = "auto", max_iter: int | None = None,
                 lower=None, upper=None):
        if not (lam > 0 and math.isfinite(lam)):
            raise ValidationError(f"prox step must be positive, got {lam}")
        if not tol > 0:
            raise ValidationError(f"prox tolerance must be positive, got {tol}")
        c = F.compiled
        if not c.separable_convex:
            raise NotConvexError("resolvent requested for a non-convex integrand")
        self.lo = c.lo if lower is None else np.maximum(c.lo, np.asarray(lower, dtype=float))
        self.hi = c.hi if upper is None else np.minimum(c.hi, np.asarray(upper, dtype=float))
        if np.any(self.lo > self.hi):
            raise ValidationError("empty constraint box")
        self.fixed = self.lo == self.hi
        extra_bounds = lower is not None or upper is not None
        self.F = F
        self.c: Compiled = c
        self.lam = float(lam)
        self.tol = float(tol)
        if method == "auto":
            linear = c.linear and not extra_bounds
            method = "linear" if linear else ("newton" if c.newton_ok else "fista")
        if method == "linear" and (extra_bounds or not c.linear):
            raise ValidationError("linear resolvent requested for a nonlinear functional")
        if method == "newton" and not c.newton_ok:
            raise ValidationError("Newton resolvent needs bounded curvature")
        if method not in ("linear", "newton", "fista"):
            raise ValidationError(f"unknown prox method {method!r}")
        self.method = method
        self.max_iter = max_iter or {"linear": 5, "newton": 200, "fista": 5000}[method]
        self.free = ~self.fixed
        self.fixed_values = np.where(self.fixed, self.lo, 0.0)
        if method == "linear":
            self._factor_linear()

    # ------------------------------------------------------------------
    def __call__(self, v: np.ndarray, warm: np.ndarray | None = None) -> ProxResult:
        return self.solve(v, warm)

    def solve(self, v, warm=None) -> ProxResult:
        v = np.asarray(v, dtype=float)
        if self.method == "linear":
            return self._solve_linear(v)
        if self.method == "newton":
            return self._solve_newton(v, warm)
        return self._solve_fista(v, warm)

    # -- shared pieces ------------------------------------------------
    def _project(self, u):
        return np.clip(u, self.lo, self.hi)

    def objective(self, u, v) -> float:
        c = self.c
        val = c.value(u)
        return 0.5 * float(np.dot(c.masses, (u - v) ** 2)) + self.lam * val

    def _delta(self, a, b, v, smooth_only=False) -> tuple[float, float]:
        """``Φ(b) − Φ(a)`` without cancellation, and its rounding error bound.

        Each term is differenced before summation (powers through
        :func:`power_delta`), so progress far below ``eps·Φ`` stays visible to
        the line searches.  ``a`` and ``b`` must lie in the box.
        """
        c = self.c
        m = c.masses
        lam = self.lam
        h = b - a
        mass = 0.5 * m * h * ((b - v) + (a - v))
        total = float(np.sum(mass))
        err = 8 * EPS * float(np.sum(np.abs(mass)))
        if c.quad:
            q = 0.5 * lam * c.quad * m * h * (a + b)
            total += float(np.sum(q))
            err += 8 * EPS * float(np.sum(np.abs(q)))
        if c.weights.size:
            d, e = power_delta(c.edge_diffs(a), h[c.heads] - h[c.tails], c.exps)
            scale = lam * c.weights / c.exps
            total += float(np.sum(scale * d))
            err += float(np.sum(scale * (e + 4 * EPS * np.abs(d))))
        if not smooth_only:
            for profile, mu in c.terms:
                on = mu > 0
                if np.any(on):
                    d, e = profile.delta(a, h)
                    total += lam * float(np.sum(mu[on] * d[on]))
                    err += lam * float(np.sum(mu[on] * (e[on] + 4 * EPS * np.abs(d[on]))))
        return total, err + np.finfo(float).tiny

    def _smooth_grad(self, u, v):
        c = self.c
        return c.masses * (u - v) + self.lam * c.smooth_grad(u)

    def certificate(self, u, v) -> tuple[float, np.ndarray, np.ndarray]:
        """``(gap bound, min-norm subgradient, rounding floor)`` at ``u``."""
        c = self.c
        g = self._smooth_grad(u, v)
        a = g + self.lam * c.separable_grad(u, "left")
        b = g + self.lam * c.separable_grad(u, "right")
        a = np.where(u <= self.lo, -np.inf, a)
        b = np.where(u >= self.hi, np.inf, b)
        r = np.where(a > 0, a, np.where(b < 0, b, 0.0))
        r[self.fixed] = 0.0
        gap = 0.5 * float(np.sum(r * r / c.masses))
        scale = c.masses * (np.abs(u) + np.abs(v)) + self.lam * self._grad_scale(u)
        return gap, r, 64 * EPS * (scale + np.finfo(float).tiny)

    def _grad_scale(self, u):
        """Magnitude of the gradient terms plus ``|∇²|·|u|``.

        The second part is the residual change caused by a one-ulp
        perturbation of ``u``; it dominates for ``p < 2`` edges whose
        differences are close to zero, where the curvature is evaluated at the
        smallest resolvable difference.
        """
        c = self.c
        au = np.abs(u)
        s = c.quad * c.masses * au + np.abs(c.separable_grad(u, "right"))
        s = s + np.abs(c.separable_curvature(u)) * au
        if c.weights.size:
            i, j = c.heads, c.tails
            d = np.abs(c.edge_diffs(u))
            flux = c.weights * d ** (c.exps - 1)
            d_eff = np.maximum(d, EPS * (au[i] + au[j]) + np.finfo(float).tiny)
            curv = c.weights * (c.exps - 1) * d_eff ** (c.exps - 2) * (au[i] + au[j])
            t = flux + curv
            s = s + np.bincount(i, t, minlength=u.size) + np.bincount(j, t, minlength=u.size)
        return s

    def _done(self, u, v):
        gap, r, floor = self.certificate(u, v)
        if gap <= self.tol ** 2:
            return True, gap, False
        if np.all(np.abs(r) <= floor):
            return True, gap, True
        return False, gap, False

    # -- linear path --------------------------------------------------
    def _factor_linear(self):
        c = self.c
        F_ = np.flatnonzero(self.free)
        self._free_ix = F_
        m = c.masses[F_]
        n_free = F_.size
        self._diag = None
        if n_free == 0:
            self._R = None
            return
        if c.weights.size == 0:
            # no edge coupling: the resolvent is a per-vertex scaling with a closed form
            H = c.hessian(np.zeros(c.space.n), 1.0, dense=False).diagonal()[F_]
            self._A = _sparse_diag(H - m)
            self._diag = 1.0 + self.lam * (H - m) / m
            self._R = self._lu = None
            return
        if n_free <= LINEAR_DENSE_LIMIT:
            A = c.linear_operator()[np.ix_(F_, F_)]
            self._A = A
            K = np.diag(m) + self.lam * A
            self._R = scipy.linalg.solve(K, np.diag(m), assume_a="pos")
            self._lu = None
        else:
            H = c.hessian(np.zeros(c.space.n), self.lam, dense=False)
            K = H[F_][:, F_].tocsc()
            self._A = (K - _sparse_diag(m)) / self.lam
            self._lu = splu(K)
            self._R = None

    def _apply_linear(self, rhs_scaled):
        if self._diag is not None:
            return rhs_scaled / self._diag
        if self._lu is not None:
            return self._lu.solve(rhs_scaled * self.c.masses[self._free_ix])
        return self._R @ rhs_scaled

    def _solve_linear(self, v) -> ProxResult:
        u = self.fixed_values.copy()
        if self._free_ix.size == 0:
            return ProxResult(u, 0.0, 0, "linear")
        F_ = self._free_ix
        m = self.c.masses[F_]
        vF = v[F_]
        uF = self._apply_linear(vF)
        it = 1
        while True:
            r = m * (uF - vF) + self.lam * (self._A @ uF)
            gap = 0.5 * float(np.sum(r * r / m))
            floor = 64 * EPS * (m * (np.abs(uF) + np.abs(vF)) + self.lam * (np.abs(self._A) @ np.abs(uF)))
            limited = bool(np.all(np.abs(r) <= floor))
            if gap <= self.tol ** 2 or limited:
                u[F_] = uF
                return ProxResult(u, gap, it, "linear", limited and gap > self.tol ** 2)
            if it >= self.max_iter:
                raise ProxConvergenceError("linear resolvent refinement stalled", gap, it)
            uF = uF - self._apply_linear(r / m)
            it += 1

    # -- projected Newton ---------------------------------------------
    def _start(self, v, warm):
        u = self._project(v if warm is None else warm)
        if not math.isfinite(self.objective(u, v)):
            u = self._project(np.zeros_like(v))
        return u

    def _newton(self, v, u, iters):
        """Projected Newton from ``u``; returns ``(u, done, gap, limited, iterations)``.

        Vertices sitting on an integrand kink whose subdifferential interval
        already contains the optimality residual are frozen for the step,
        as are vertices held at a box bound by the gradient.
        """
        c = self.c
        lam = self.lam
        n = v.size
        dense = n <= DENSE_LIMIT
        for it in range(iters + 1):
            ok, gap, limited = self._done(u, v)
            if ok or it == iters:
                return u, ok, gap, limited, it
            gs = self._smooth_grad(u, v)
            a = gs + lam * c.separable_grad(u, "left")
            b = gs + lam * c.separable_grad(u, "right")
            g = np.where(a > 0, a, np.where(b < 0, b, 0.0))
            kink = (a < b) & (a <= 0) & (b >= 0)
            eps_act = min(1e-3, math.sqrt(2 * gap))
            active = self.fixed | kink | ((u <= self.lo + eps_act) & (g > 0)) | ((u >= self.hi - eps_act) & (g < 0))
            H = c.hessian(u, lam, dense)
            diag = np.diag(H).copy() if dense else H.diagonal()
            if not np.all(np.isfinite(diag)):
                # p < 2 edges with zero difference: cap the curvature
                finite = diag[np.isfinite(diag)]
                cap = 1e8 * (float(finite.max()) if finite.size else 1.0)
                H = c.hessian(u, lam, dense)
                if dense:
                    H[~np.isfinite(H)] = cap
                else:
                    H.data[~np.isfinite(H.data)] = cap
                    H = H.tocsc()
                diag = np.diag(H).copy() if dense else H.diagonal()
            d = np.zeros(n)
            fi = np.flatnonzero(~active)
            if fi.size:
                if dense:
                    HF = H[np.ix_(fi, fi)]
                    try:
                        d[fi] = scipy.linalg.solve(HF, -g[fi], assume_a="pos", check_finite=False)
                    except (np.linalg.LinAlgError, ValueError):
                        d[fi] = np.linalg.lstsq(HF, -g[fi], rcond=None)[0]
                else:
                    d[fi] = splu(H[fi][:, fi].tocsc()).solve(-g[fi])
            ai = np.flatnonzero(active & ~self.fixed & ~kink)
            if ai.size:
                d[ai] = -g[ai] / diag[ai]
            # stay on the current smooth piece: a step stops at the next kink
            piece_lo, piece_hi = self._piece(u)
            step = 1.0
            while True:
                trial = np.clip(u + step * d, piece_lo, piece_hi)
                delta, err = self._delta(u, trial, v)
                if delta <= 1e-4 * float(np.dot(g, trial - u)) + err:
                    break
                step *= 0.5
                if step < 1e-14:
                    return u, False, gap, False, it
            if np.array_equal(trial, u):
                return u, False, gap, False, it
            u = trial
        raise AssertionError("unreachable")

    def _piece(self, u):
        """Bounds of the box cell between the kinks adjacent to ``u``."""
        K = self.c.kink_table
        if K.shape[1] == 0:
            return self.lo, self.hi
        with np.errstate(invalid="ignore"):
            up = np.where(K > u[:, None], K, np.inf).min(axis=1)
            down = np.where(K < u[:, None], K, -np.inf).max(axis=1)
        return np.maximum(self.lo, down), np.minimum(self.hi, up)

    def _solve_newton(self, v, warm) -> ProxResult:
        u, ok, gap, limited, it = self._newton(v, self._start(v, warm), self.max_iter)
        if ok:
            return ProxResult(u, gap, it, "newton", limited)
        # Newton stalled (typically a long step through a curvature cliff);
        # finish with the first-order method from the current point.
        u, ok, gap, limited, it2 = self._fista(v, u, 5000)
        if ok:
            return ProxResult(u, gap, it + it2, "newton", limited)
        raise ProxConvergenceError("projected Newton and proximal gradient both stalled", gap, it + it2)

    # -- accelerated proximal gradient --------------------------------
    def _vertex_prox(self, z, tau):
        """Per-vertex ``argmin (m/2τ)(s − z)² + λ Σ μ B(s)`` on the box."""
        c = self.c
        lam = self.lam
        m = c.masses
        s0 = np.clip(z, self.lo, self.hi)
        if not c.terms:
            return s0
        lo = np.clip(np.minimum(0.0, z), self.lo, self.hi)
        hi = np.clip(np.maximum(0.0, z), self.lo, self.hi)

        def h_right(s):
            return (m / tau) * (s - z) + lam * c.separable_grad(s, "right")

        def h_left(s):
            return (m / tau) * (s - z) + lam * c.separable_grad(s, "left")

        zero = np.zeros_like(z)
        at_zero = (h_left(zero) <= 0) & (h_right(zero) >= 0)
        # safeguarded Newton inside the bracket [lo, hi]
        a, b = lo.copy(), hi.copy()
        s = np.clip(0.5 * (a + b), a, b)
        for _ in range(100):
            hr = h_right(s)
            right = hr > 0
            b = np.where(right, s, b)
            a = np.where(right, a, s)
            with np.errstate(divide="ignore", invalid="ignore"):
                curv = m / tau + lam * c.separable_curvature(s)
                cand = s - hr / curv
            bad = ~np.isfinite(cand) | (cand <= a) | (cand >= b)
            s_new = np.where(bad, 0.5 * (a + b), cand)
            settled = (np.abs(s_new - s) <= 4 * EPS * np.maximum(1.0, np.abs(s))) | \
                (np.abs(hr) <= 8 * EPS * (m / tau) * (np.abs(s) + np.abs(z) + 1e-300)) | \
                (b - a <= 4 * EPS * np.maximum(1.0, np.abs(s)))
            s = s_new
            if np.all(settled):
                break
        # the optimum may sit on an end of the bracket
        s = np.where(h_right(lo) >= 0, lo, s)
        s = np.where(h_left(hi) <= 0, hi, s)
        s = np.where(at_zero, 0.0, s)
        K = c.kink_table
        for j in range(K.shape[1]):
            k = K[:, j]
            ok = np.isfinite(k)
            kk = np.where(ok, k, 0.0)
            snap = ok & (kk >= lo) & (kk <= hi) & (h_left(kk) <= 0) & (h_right(kk) >= 0)
            s = np.where(snap, kk, s)
        return np.where(self.fixed, self.lo, s)

    def _fista(self, v, x, iters):
        """FISTA from ``x``; returns ``(x, done, gap, limited, iterations)``."""
        c = self.c
        m = c.masses
        y = x.copy()
        t = 1.0
        tau = 1.0
        for it in range(iters + 1):
            ok, gap, limited = self._done(x, v)
            if ok or it == iters:
                return x, ok, gap, limited, it
            gy = self._smooth_grad(y, v)
            while True:
                x_new = self._vertex_prox(y - tau * gy / m, tau)
                diff = x_new - y
                bound = float(np.dot(gy, diff)) + float(np.dot(m, diff * diff)) / (2 * tau)
                df, err = self._delta(y, x_new, v, smooth_only=True)
                if df <= bound + err or tau < 1e-16:
                    break
                tau *= 0.5
            if t > 1.0 and float(np.dot(m * (y - x_new), x_new - x)) > 0:
                # gradient-mapping restart: momentum points uphill, drop it
                t = 1.0
                y = x.copy()
                continue
            t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
            y = self._project(x_new + ((t - 1) / t_new) * (x_new - x))
            x, t = x_new, t_new
            tau = min(tau * 1.25, 1.0)
        raise AssertionError("unreachable")

    def _try_fused(self, v, x):
        """Certified candidate with near-equal neighbours merged, or ``None``.

        For ``p < 2`` edges the optimal difference can lie below the
        resolution of ``x``; merging each cluster of vertices joined by edges
        with ``|Δ| <= δ`` to its mass-weighted mean gives the representable
        point closest to the optimum.  Clusters touching a bound are skipped.
        """
        c = self.c
        if not c.weights.size or np.all(c.exps >= 2):
            return None
        d = np.abs(c.edge_diffs(x))
        scale = float(np.max(np.abs(x))) + np.finfo(float).tiny
        boxed = np.isfinite(self.lo) | np.isfinite(self.hi)
        n = x.size
        for k in (12, 10, 8, 6):
            close = d <= 10.0 ** (-k) * scale
            if not np.any(close):
                continue
            A = coo_matrix((np.ones(int(close.sum())), (c.heads[close], c.tails[close])), shape=(n, n))
            _, labels = connected_components(A, directed=False)
            m = c.masses
            mass = np.bincount(labels, m)
            means = np.bincount(labels, m * x) / mass
            skip = np.bincount(labels, boxed.astype(float)) > 0
            cand = np.where(skip[labels], x, means[labels])
            ok, gap, limited = self._done(cand, v)
            if ok:
                return cand, gap, limited
        return None

    def _solve_fista(self, v, warm) -> ProxResult:
        """First-order phase, then Newton polish once the kinks are identified."""
        x = self._start(v, warm)
        total = 0
        budget = self.max_iter
        chunk = 25
        while True:
            x, ok, gap, limited, it = self._fista(v, x, min(chunk, budget - total))
            total += it
            if ok:
                return ProxResult(x, gap, total, "fista", limited)
            x_n, ok, gap_n, limited, it = self._newton(v, x, 50)
            total += it
            if ok:
                return ProxResult(x_n, gap_n, total, "fista", limited)
            if gap_n < gap:
                x = x_n
            fused = self._try_fused(v, x)
            if fused is not None:
                return ProxResult(fused[0], fused[1], total, "fista", fused[2])
            if total >= budget:
                break
            chunk *= 2
        raise ProxConvergenceError(
            f"proximal gradient did not reach gap {self.tol ** 2:.3g} in {budget} iterations",
            min(gap, gap_n), total)


def _sparse_diag(m):
    from scipy import sparse
    return sparse.diags(m, format="csc")


def prox_solve(F: FunctionalSpec, lam: float, v, tol: float = 1e-10, **kwargs) -> ProxResult:
    """Resolvent with solver diagnostics; see :class:`Resolvent`."""
    return Resolvent(F, lam, tol, **kwargs).solve(as_values(F, v))


def prox(F: FunctionalSpec, lam: float, v, tol: float = 1e-10, **kwargs) -> Field:
    """``argmin_u ½‖u − v‖²_{L²(m)} + λ·F(u)`` as a field.

    Examples
    --------
    >>> from dflow.space import FiniteSpace
    >>> from dflow.forms import Quadratic
    >>> X = FiniteSpace.path(3)
    >>> prox(Quadratic(X), 1.0, [2.0, 4.0, -6.0]).tolist()
    [1.0, 2.0, -3.0]
    """
    return Field(F.space, prox_solve(F, lam, v, tol, **kwargs).u)
