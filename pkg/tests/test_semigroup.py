import csv
import io
import json
import math

import numpy as np
import pytest
import scipy.linalg

from dflow.errors import ProxConvergenceError, SpaceMismatchError, ValidationError
from dflow.forms import (BProfile, DirichletRestricted, GraphPEnergy, Perturbed, PowerLaw, Quadratic, Resolvent,
                         VertexMeasure, Zero)
from dflow.semigroup import Trajectory, check_trajectory_domination, contraction_checks, dominate, evolve
from dflow.space import FiniteSpace

P6 = FiniteSpace.path(6, mass=[1.0, 0.5, 2.0, 1.0, 0.7, 1.2])
C7 = FiniteSpace.cycle(7)


@pytest.mark.parametrize("n", [1, 4, 50])
def test_quadratic_closed_form(n, rng):
    u0 = rng.normal(size=6)
    T = evolve(Quadratic(P6), u0, 1.0, n)
    assert np.allclose(T.final.values, u0 / (1 + 1 / n) ** n, rtol=1e-12)


def test_quadratic_approaches_exponential(rng):
    u0 = rng.normal(size=6)
    errs = [np.max(np.abs(evolve(Quadratic(P6), u0, 1.0, n).final.values - math.exp(-1) * u0)) for n in (100, 200)]
    assert errs[1] < errs[0] and errs[0] / errs[1] == pytest.approx(2.0, rel=0.02)


def test_zero_generator_is_constant(rng):
    u0 = rng.normal(size=6)
    T = evolve(Zero(P6), u0, 2.0, 9)
    assert np.all(T.states == u0)


def test_p2_matches_eigendecomposition_oracle(rng):
    """Implicit Euler for ``M u' = −L u`` is ``(I + hM⁻¹L)^{-k}``, diagonalised by the generalised eigenproblem."""
    L, M = C7.laplacian(), np.diag(C7.masses)
    u0 = rng.normal(size=7)
    u0 -= np.dot(C7.masses, u0) / C7.masses.sum()
    steps, t = 40, 1.5
    h = t / steps
    w, V = scipy.linalg.eigh(L, M)  # V.T M V = I
    coef = V.T @ M @ u0
    ref = V @ (coef / (1 + h * w) ** steps)
    T = evolve(GraphPEnergy(C7, 2.0), u0, t, steps, tol=1e-12)
    assert np.allclose(T.final.values, ref, atol=1e-11)
    assert T.l2_norms()[-1] < T.l2_norms()[0]


@pytest.mark.parametrize("F", [GraphPEnergy(P6, 3.0), GraphPEnergy(P6, 1.5),
                               Perturbed(GraphPEnergy(P6, 2.0), BProfile.on(6, [0, 5], PowerLaw(1.0, 2.0, 1.0)),
                                         VertexMeasure.on(6, [0, 5]))],
                         ids=["p3", "p1.5", "l1"])
def test_energy_and_norm_nonincreasing(F, rng):
    T = evolve(F, 2 * rng.normal(size=6), 1.0, 30, tol=1e-10)
    e = T.energies(F)
    assert np.all(np.diff(e) <= 1e-12 * (1 + e[:-1]))
    if F.is_symmetric:
        n = T.l2_norms()
        assert np.all(np.diff(n) <= 1e-9)


def test_semigroup_property_improves_with_resolution(rng):
    F = GraphPEnergy(P6, 3.0)
    u0 = rng.normal(size=6)
    gaps = []
    for n in (20, 80):
        whole = evolve(F, u0, 1.0, 2 * n, tol=1e-12).final.values
        half = evolve(F, u0, 0.4, n, tol=1e-12).final.values
        rest = evolve(F, half, 0.6, n, tol=1e-12).final.values
        gaps.append(np.max(np.abs(whole - rest)))
    assert gaps[1] < gaps[0] / 2


def test_initial_projection_recorded():
    F = DirichletRestricted(GraphPEnergy(P6, 2.0), P6.boundary)
    T = evolve(F, np.ones(6), 1.0, 5)
    assert T.metadata["projected"] and T.metadata["projected_vertices"] == [0, 5]
    assert T.states[0, 0] == 0.0 and np.all(T.states[:, [0, 5]] == 0)
    T2 = evolve(F, np.r_[0.0, np.ones(4), 0.0], 1.0, 5)
    assert not T2.metadata["projected"]


def test_evolve_validation():
    with pytest.raises(ValidationError):
        evolve(Zero(P6), np.zeros(6), 0.0, 5)
    with pytest.raises(ValidationError):
        evolve(Zero(P6), np.zeros(6), 1.0, 0)
    with pytest.raises(ValidationError):
        evolve(Zero(P6), np.zeros(6), 1.0, 4, resolvent=Resolvent(Zero(P6), 0.5))
    with pytest.raises(ValidationError):
        Trajectory(P6, [0.0, 0.0], np.zeros((2, 6)), "x")


def test_prox_failure_carries_step_index(rng):
    F = GraphPEnergy(P6, 1.5)
    with pytest.raises(ProxConvergenceError) as info:
        evolve(F, rng.normal(size=6), 1.0, 3, resolvent=Resolvent(F, 1 / 3, tol=1e-14, max_iter=2))
    k = info.value.step
    assert 1 <= k <= 3 and str(info.value).startswith(f"step {k} of 3")


# -- domination ------------------------------------------------------------------
def test_self_domination_nonnegative_data(rng):
    u0 = np.abs(rng.normal(size=6))
    rep, S, T = dominate(Quadratic(P6), Quadratic(P6), u0, 1.0, 20)
    assert rep.violation == 0.0 and rep.passed


def test_perturbed_flow_is_dominated(rng):
    E = GraphPEnergy(P6, 2.0)
    F = Perturbed(E, BProfile.uniform(6, PowerLaw(1.0, 1.0, 2.0)), VertexMeasure(np.ones(6)))
    rep, _, _ = dominate(F, E, rng.normal(size=6), 1.0, 40)
    assert rep.passed


def test_swapped_roles_violate():
    E = GraphPEnergy(P6, 2.0)
    F = Perturbed(E, BProfile.on(6, [0], PowerLaw(5.0, 5.0, 2.0)), VertexMeasure.on(6, [0]))
    bump = np.zeros(6)
    bump[0] = 1.0
    rep, _, _ = dominate(E, F, bump, 1.0, 40)
    assert not rep.passed and rep.violation > 1e-3 and rep.vertex == 0


def test_domination_grid_mismatch():
    A = evolve(Zero(P6), np.zeros(6), 1.0, 4)
    B = evolve(Zero(P6), np.zeros(6), 1.0, 5)
    with pytest.raises(ValidationError):
        check_trajectory_domination(A, B)
    with pytest.raises(SpaceMismatchError):
        check_trajectory_domination(A, evolve(Zero(C7), np.zeros(7), 1.0, 4))


# -- contraction -------------------------------------------------------------------
def _pairs(rng, n, k=8):
    return [(rng.normal(size=n), rng.normal(size=n)) for _ in range(k)]


def test_quadratic_contraction_checks(rng):
    rep = contraction_checks(Quadratic(P6), _pairs(rng, 6), 1.0, 10)
    assert rep.passed and rep.l2 <= 0 and rep.linf <= 0


def test_p3_contraction_checks(rng):
    X = FiniteSpace.path(6)
    rep = contraction_checks(GraphPEnergy(X, 3.0), _pairs(rng, 6, 50), 1.0, 10, tol=1e-8)
    assert rep.passed, rep.to_dict()


def test_dirichlet_restricted_order_preservation(rng):
    X = FiniteSpace.path(6)
    F = DirichletRestricted(Quadratic(X), X.boundary)
    pairs = []
    for u, v in _pairs(rng, 6):
        u[[0, 5]] = 0.0
        v[[0, 5]] = 0.0
        pairs.append((u, v))
    rep = contraction_checks(F, pairs, 1.0, 10)
    assert rep.order <= 1e-8 and rep.passed


# -- export ----------------------------------------------------------------------
def test_csv_and_json_export(tmp_path, rng):
    T = evolve(GraphPEnergy(P6, 2.0), rng.normal(size=6), 1.0, 4)
    text = T.to_csv(tmp_path / "t.csv")
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["time"] + [f"v{i}" for i in range(6)]
    assert len(rows) == 6
    assert np.allclose(np.array(rows[1:], dtype=float)[:, 1:], T.states, rtol=0, atol=0)
    data = json.loads(T.to_json(tmp_path / "t.json"))
    assert data["generator"] == GraphPEnergy(P6, 2.0).digest
    assert data["metadata"]["steps"] == 4 and data["metadata"]["tol"] == 1e-10
    assert (tmp_path / "t.csv").exists() and (tmp_path / "t.json").exists()
