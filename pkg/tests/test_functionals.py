import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dflow.errors import NotDifferentiableError, SpaceMismatchError, ValidationError
from dflow.forms import (E1, BProfile, DirichletRestricted, GraphPEnergy, Perturbed, PowerLaw, Quadratic, Table,
                         VertexMeasure, Well, Zero, ZeroB, evaluate, functional_from_dict, gradient, perturbation)
from dflow.space import Field, FiniteSpace

X2 = FiniteSpace([1.0, 1.0], [(0, 1, 1.0)])
P6 = FiniteSpace.path(6, weight=1.5, mass=[1.0, 0.5, 2.0, 1.0, 0.7, 1.2])
C5 = FiniteSpace.cycle(5)


def build_specs():
    bd = BProfile.on
    return {
        "zero": Zero(P6),
        "quadratic": Quadratic(P6, 2.0),
        "p2": GraphPEnergy(P6, 2.0),
        "p1.5": GraphPEnergy(P6, 1.5),
        "p_mixed": GraphPEnergy(P6, (1.5, 2.0, 3.0, 2.5, 4.0)),
        "robin": Perturbed(GraphPEnergy(P6, 2.0), bd(6, P6.boundary, PowerLaw(1.0, 1.0, 2.0)),
                           VertexMeasure.on(6, P6.boundary)),
        "robin_asym": Perturbed(GraphPEnergy(P6, 3.0), bd(6, P6.boundary, PowerLaw(1.0, 4.0, 2.0)),
                                VertexMeasure.on(6, P6.boundary)),
        "q1": Perturbed(GraphPEnergy(P6, 2.0), BProfile.uniform(6, PowerLaw(0.5, 0.5, 1.0)),
                        VertexMeasure(np.ones(6))),
        "well": Perturbed(GraphPEnergy(P6, 2.0), BProfile.uniform(6, Well(-1.0, 1.0)), VertexMeasure(np.ones(6))),
        "table": Perturbed(GraphPEnergy(P6, 2.0), BProfile.uniform(6, Table((-2.0, 0.0, 1.0, 3.0),
                                                                            (2.0, 0.0, 0.25, 4.0))),
                           VertexMeasure(np.full(6, 0.5))),
        "dirichlet": DirichletRestricted(GraphPEnergy(P6, 2.0), P6.boundary),
    }


SPECS = build_specs()


# -- examples ------------------------------------------------------------------
def test_eval_examples():
    assert evaluate(GraphPEnergy(X2, 2.0), Field(X2, [0.0, 1.0])) == 0.5
    assert evaluate(Quadratic(X2, 1.0), Field(X2, [1.0, 1.0])) == 1.0
    X = FiniteSpace.path(3)
    F = Perturbed(Zero(X), BProfile.on(3, [0], Well(0.0, 0.0)), VertexMeasure.on(3, [0]))
    assert evaluate(F, [0.5, 0.0, 0.0]) == math.inf
    assert evaluate(F, [0.0, 3.0, -1.0]) == 0.0


def test_graph_energy_weights_and_exponents():
    X = FiniteSpace([1.0, 1.0, 1.0], [(0, 1, 2.0), (1, 2, 3.0)])
    F = GraphPEnergy(X, (3.0, 1.5))
    u = np.array([0.0, 2.0, 1.0])
    assert evaluate(F, u) == pytest.approx(2.0 * 8 / 3 + 3.0 * 1 / 1.5)


def test_dirichlet_restricted_is_infinite_off_the_set():
    F = SPECS["dirichlet"]
    u = np.linspace(0, 1, 6)
    assert evaluate(F, u) == math.inf
    u[[0, 5]] = 0.0
    assert evaluate(F, u) == evaluate(GraphPEnergy(P6, 2.0), u)


def test_zero_mass_suppresses_well():
    F = Perturbed(Zero(P6), BProfile.uniform(6, Well(0.0, 0.0)), VertexMeasure.on(6, [0]))
    assert evaluate(F, np.r_[0.0, np.ones(5)]) == 0.0
    assert evaluate(F, np.ones(6)) == math.inf


def test_validation_errors():
    with pytest.raises(ValidationError):
        Quadratic(P6, 0.0)
    with pytest.raises(ValidationError):
        GraphPEnergy(P6, 1.0)
    with pytest.raises(ValidationError):
        GraphPEnergy(P6, (2.0, 2.0))
    with pytest.raises(ValidationError):
        Perturbed(Zero(P6), BProfile.uniform(5, ZeroB()), VertexMeasure(np.ones(6)))
    with pytest.raises(SpaceMismatchError):
        evaluate(Zero(P6), np.zeros(5))
    with pytest.raises(SpaceMismatchError):
        evaluate(Zero(P6), Field(C5, np.zeros(5)))


def test_perturbation_psi():
    E = GraphPEnergy(P6, 2.0)
    F = SPECS["robin"]
    psi = perturbation(F, E)
    u = np.arange(6.0)
    assert psi(u) == pytest.approx(0.0 ** 2 + 5.0 ** 2)
    well = SPECS["well"]
    assert perturbation(well, E)(3 * np.ones(6)) == math.inf


def test_E1():
    u = np.ones(6)
    assert E1(Zero(P6), u) == pytest.approx(P6.masses.sum())


# -- gradients -----------------------------------------------------------------
def test_gradient_examples():
    g = gradient(GraphPEnergy(X2, 2.0), Field(X2, [0.0, 1.0]))
    assert g.tolist() == [-1.0, 1.0]
    Xm = FiniteSpace([2.0, 4.0], [(0, 1, 1.0)])
    assert gradient(GraphPEnergy(Xm, 2.0), [0.0, 1.0]).tolist() == [-0.5, 0.25]
    u = np.arange(6.0)
    assert np.allclose(gradient(Quadratic(P6, 1.0), u).values, u)
    assert np.allclose(gradient(Quadratic(P6, 1.0), u, pairing="euclidean").values, P6.masses * u)
    assert gradient(Zero(P6), u).tolist() == [0.0] * 6


def _fd_grad(F, u, h=1e-6):
    g = np.empty_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h
        g[i] = (evaluate(F, u + e) - evaluate(F, u - e)) / (2 * h)
    return g


@pytest.mark.parametrize("name", ["quadratic", "p2", "p_mixed", "robin", "robin_asym"])
def test_gradient_matches_central_differences(name, rng):
    F = SPECS[name]
    for _ in range(5):
        u = rng.normal(size=6)
        g = gradient(F, u, pairing="euclidean").values
        assert np.allclose(g, _fd_grad(F, u), rtol=1e-6, atol=1e-6)


def test_gradient_refuses_kinks_and_constraints():
    with pytest.raises(NotDifferentiableError):
        gradient(SPECS["q1"], np.array([0.0, 1, 2, 3, 4, 5]))
    with pytest.raises(NotDifferentiableError):
        gradient(SPECS["dirichlet"], np.zeros(6))
    with pytest.raises(NotDifferentiableError):
        gradient(SPECS["well"], np.full(6, 1.0))
    with pytest.raises(ValueError):
        gradient(Zero(P6), np.zeros(6), pairing="sobolev")


# -- serialization -------------------------------------------------------------
@pytest.mark.parametrize("name", sorted(SPECS))
def test_json_round_trip(name):
    F = SPECS[name]
    G = functional_from_dict(F.to_dict(), P6)
    assert G.to_dict() == F.to_dict()
    assert G.digest == F.digest
    u = np.linspace(-0.5, 0.5, 6)
    assert evaluate(G, u) == evaluate(F, u)


def test_json_shorthands():
    F = functional_from_dict({"type": "perturbed", "base": {"type": "graph_p_energy"},
                              "profile": {"on": "boundary", "integrand": {"type": "power_law"}},
                              "mu": "boundary"}, P6)
    assert evaluate(F, np.ones(6)) == pytest.approx(2.0)
    D = functional_from_dict({"type": "dirichlet_restricted", "base": {"type": "zero"}}, P6)
    assert D.vertices == P6.boundary
    with pytest.raises(ValidationError):
        functional_from_dict({"type": "laplace"}, P6)
    with pytest.raises(ValidationError):
        functional_from_dict({"type": "perturbed", "base": {"type": "zero"},
                              "profile": {"on": [0]}, "mu": "boundary"}, P6)
    with pytest.raises(ValidationError):
        functional_from_dict({"type": "perturbed", "base": {"type": "zero"}}, P6)
    with pytest.raises(ValidationError):
        functional_from_dict({"type": "perturbed", "base": {"type": "zero"},
                              "profile": {"type": "zero"}, "mu": "everywhere"}, P6)


# -- invariants ----------------------------------------------------------------
vec6 = arrays(np.float64, 6, elements=st.floats(-3, 3, allow_nan=False))


@pytest.mark.parametrize("name", sorted(SPECS))
def test_zero_at_origin(name):
    assert evaluate(SPECS[name], np.zeros(6)) == 0.0


@pytest.mark.parametrize("name", sorted(SPECS))
@settings(max_examples=60)
@given(u=vec6, v=vec6)
def test_midpoint_convexity(name, u, v):
    F = SPECS[name]
    fu, fv = evaluate(F, u), evaluate(F, v)
    if math.isinf(fu) or math.isinf(fv):
        return
    mid = evaluate(F, (u + v) / 2)
    assert mid <= (fu + fv) / 2 + 1e-12 * (1 + fu + fv)


@pytest.mark.parametrize("name", sorted(SPECS))
@given(u=vec6)
def test_symmetry_flag_is_honest(name, u):
    F = SPECS[name]
    if F.is_symmetric:
        a, b = evaluate(F, u), evaluate(F, -u)
        assert a == b or math.isclose(a, b, rel_tol=1e-14)


def test_asymmetric_specs_detected():
    assert not SPECS["robin_asym"].is_symmetric
    assert SPECS["robin"].is_symmetric
    u = np.full(6, -1.0)
    assert evaluate(SPECS["robin_asym"], u) != evaluate(SPECS["robin_asym"], -u)
