import json
import math

import numpy as np
import pytest

from dflow.errors import ValidationError
from dflow.forms import (BProfile, GraphPEnergy, Perturbed, PowerLaw, Quadratic, Table, VertexMeasure, Well, Zero,
                         perturbation)
from dflow.properties import (Sampler, abs_gap, alpha_truncation_gap, barthelemy_gap, check_abs_inequality,
                              check_alpha_truncation, check_barthelemy, check_cone_monotone, check_locality,
                              check_submodular, cone_monotone_gap, locality_gap, submodular_gap)
from dflow.semigroup import dominate
from dflow.space import FiniteSpace

X2 = FiniteSpace([1.0, 1.0], [(0, 1, 1.0)])
C5 = FiniteSpace.cycle(5)
P6 = FiniteSpace.path(6)


def perturbed(base, integrand, vertices=None):
    n = base.space.n
    verts = range(n) if vertices is None else vertices
    return Perturbed(base, BProfile.on(n, verts, integrand), VertexMeasure.on(n, verts))


# -- examples -------------------------------------------------------------------
def test_submodular_examples():
    E = GraphPEnergy(X2, 2.0)
    assert submodular_gap(E, [0.0, 1.0], [1.0, 0.0]) == -1.0
    u = np.array([0.3, -1.0])
    assert submodular_gap(E, u, u) == 0.0
    rep = check_submodular(Quadratic(P6), Sampler(P6, seed=1, count=100))
    assert abs(rep.worst) <= 1e-14 and rep.passed


def test_alpha_truncation_examples():
    u = np.array([0.2, -0.7, 1.0, 0.0, 0.5, 0.1])
    assert alpha_truncation_gap(GraphPEnergy(P6, 3.0), u, u, 1.0) == 0.0
    rep = check_alpha_truncation(Quadratic(P6), Sampler(P6, seed=2, count=100), (0.1, 1.0, 10.0))
    assert rep.worst <= 0 and rep.checked == 300
    rep = check_alpha_truncation(GraphPEnergy(C5, 3.0), Sampler(C5, seed=3, count=200))
    assert rep.worst <= 1e-10


def test_barthelemy_examples(rng):
    E = GraphPEnergy(P6, 2.0)
    F = perturbed(E, PowerLaw(1.0, 2.0, 2.0))
    u = rng.normal(size=6)
    # v = 0 reduces to E(|u|) <= F(u)
    g = barthelemy_gap(F, E, u, np.zeros(6))
    assert g == pytest.approx(E(np.abs(u)) - F(u))
    assert check_barthelemy(Quadratic(P6), Quadratic(P6), Sampler(P6, seed=4)).passed
    assert check_barthelemy(perturbed(Quadratic(P6), PowerLaw(1.0, 1.0, 3.0)), Quadratic(P6),
                            Sampler(P6, seed=5)).passed
    with pytest.raises(ValidationError):
        barthelemy_gap(F, E, u, -np.ones(6))


def test_barthelemy_infinite_rhs_is_vacuous():
    E = GraphPEnergy(P6, 2.0)
    F = perturbed(E, Well(0.0, 0.0), [0])
    assert barthelemy_gap(F, E, np.ones(6), np.ones(6)) is None


def test_locality_examples(rng):
    X = FiniteSpace([1.0] * 4, [(0, 1, 1.0), (2, 3, 2.0)])
    E = GraphPEnergy(X, 3.0)
    u = np.array([0.5, -1.0, 0.0, 0.0])
    v = np.array([0.0, 0.0, 2.0, 0.3])
    assert locality_gap(E, u, v) == 0.0
    F = perturbed(Zero(P6), PowerLaw(1.0, 3.0, 1.5))
    assert check_locality(perturbation(F, Zero(P6)), Sampler(P6, seed=6)).worst <= 1e-14
    assert locality_gap(E, np.zeros(4), v) == 0.0
    with pytest.raises(ValidationError):
        locality_gap(E, np.ones(4), np.ones(4))


def test_graph_energy_is_not_local_across_an_edge():
    E = GraphPEnergy(X2, 2.0)
    assert locality_gap(E, [1.0, 0.0], [0.0, 1.0]) == 1.0


def test_cone_monotone_examples():
    E = GraphPEnergy(P6, 2.0)
    psi = perturbation(perturbed(E, PowerLaw(1.0, 2.0, 1.5)), E)
    assert check_cone_monotone(psi, Sampler(P6, seed=7)).worst <= 1e-12
    u = np.linspace(0, 1, 6)
    assert cone_monotone_gap(psi, u, u) == 0.0
    same = perturbation(E, E)
    assert check_cone_monotone(same, Sampler(P6, seed=8)).worst == 0.0
    with pytest.raises(ValidationError):
        cone_monotone_gap(psi, u, -u)


def test_abs_inequality_examples():
    assert abs_gap(GraphPEnergy(X2, 2.0), [-1.0, 1.0]) == -2.0
    u = np.linspace(0, 2, 6)
    assert abs_gap(GraphPEnergy(P6, 3.0), u) == 0.0
    rep = check_abs_inequality(Quadratic(P6), Sampler(P6, seed=9))
    assert abs(rep.worst) <= 1e-15
    with pytest.raises(ValidationError):
        check_abs_inequality(perturbed(Zero(P6), PowerLaw(1.0, 2.0, 2.0)), Sampler(P6))


# -- invariants -----------------------------------------------------------------
FORMS = {
    "p2": GraphPEnergy(C5, 2.0),
    "p3": GraphPEnergy(C5, 3.0),
    "p1.5": GraphPEnergy(C5, 1.5),
    "robin": perturbed(GraphPEnergy(C5, 2.0), PowerLaw(1.0, 3.0, 2.0), [0, 2]),
    "table": perturbed(GraphPEnergy(C5, 3.0), Table((-1.0, 0.0, 2.0), (1.0, 0.0, 2.0))),
    "well": perturbed(GraphPEnergy(C5, 2.0), Well(-0.5, 0.5), [1]),
}


@pytest.mark.parametrize("name", sorted(FORMS))
def test_dirichlet_form_inequalities_hold(name):
    E = FORMS[name]
    s = Sampler(C5, seed=11, count=150)
    assert check_submodular(E, s).passed
    assert check_alpha_truncation(E, s).passed
    if E.is_symmetric:
        assert check_abs_inequality(E, s).passed


@pytest.mark.parametrize("check", ["submodular", "alpha", "barthelemy", "abs"])
def test_witness_reproduces_reported_violation(check):
    E = FORMS["p3"]
    F = FORMS["robin"]
    s = Sampler(C5, seed=12, count=80)
    if check == "submodular":
        rep = check_submodular(E, s)
        again = submodular_gap(E, rep.witness["u"], rep.witness["v"])
    elif check == "alpha":
        rep = check_alpha_truncation(E, s)
        again = alpha_truncation_gap(E, rep.witness["u"], rep.witness["v"], rep.witness["alpha"])
    elif check == "barthelemy":
        rep = check_barthelemy(F, GraphPEnergy(C5, 2.0), s)
        again = barthelemy_gap(F, GraphPEnergy(C5, 2.0), rep.witness["u"], rep.witness["v"])
    else:
        rep = check_abs_inequality(E, s)
        again = abs_gap(E, rep.witness["u"])
    assert again == pytest.approx(rep.worst, rel=1e-14, abs=1e-300)


@pytest.mark.parametrize("integrand", [PowerLaw(1.0, 3.0, 2.0), PowerLaw(0.5, 0.5, 1.0),
                                       Table((-1.0, 0.0, 2.0), (1.0, 0.0, 2.0))], ids=repr)
def test_pointwise_perturbation_leaves_submodular_gap_unchanged(integrand):
    E = GraphPEnergy(C5, 3.0)
    F = perturbed(E, integrand)
    s = Sampler(C5, seed=13, count=100)
    a, b = check_submodular(E, s), check_submodular(F, s)
    scale = 1 + np.nanmax(np.abs(a.gaps))
    assert np.allclose(a.gaps, b.gaps, rtol=0, atol=1e-12 * scale)


def test_modularity_probes():
    rep = check_submodular(GraphPEnergy(C5, 3.0), Sampler(C5, seed=14, count=100))
    assert rep.extra["edge_coherent_max_abs_gap"] <= 1e-12
    rep = check_submodular(GraphPEnergy(X2, 2.0), Sampler(X2, seed=15, count=100))
    assert rep.extra["comonotone_max_abs_gap"] > 1e-6  # discrete energies are not modular on comonotone pairs


def test_barthelemy_pass_implies_domination(rng):
    E = GraphPEnergy(P6, 2.0)
    F = perturbed(E, PowerLaw(2.0, 1.0, 2.0), [0, 3])
    rep = check_barthelemy(F, E, Sampler(P6, seed=16, count=100))
    assert rep.passed
    for _ in range(3):
        dom, _, _ = dominate(F, E, rng.normal(size=6), 1.0, 30)
        assert dom.passed


def test_sampler_determinism_and_validation():
    a = Sampler(P6, seed=3, count=10)
    b = Sampler(P6, seed=3, count=10)
    for name in ("fields", "pairs", "disjoint_pairs", "comonotone_pairs", "ordered_pairs", "edge_coherent_pairs"):
        x, y = getattr(a, name)(), getattr(b, name)()
        assert all(np.array_equal(np.asarray(p), np.asarray(q)) for p, q in zip(x, y))
    assert not np.array_equal(Sampler(P6, seed=4, count=1).fields()[0], a.fields()[0])
    assert all(np.all(f >= 0) for f in Sampler(P6, kind="nonnegative", count=20).fields())
    for u, v in a.disjoint_pairs():
        assert np.all(u * v == 0)
    with pytest.raises(ValidationError):
        Sampler(P6, kind="cauchy")
    with pytest.raises(ValidationError):
        Sampler(6).edge_coherent_pairs()


def test_report_serialisation():
    rep = check_submodular(GraphPEnergy(C5, 2.0), Sampler(C5, seed=1, count=20))
    d = json.loads(rep.to_json())
    assert d["checked"] == 20 and d["passed"] is True and "witness" in d
    assert rep.row().split()[0] == "submodular" and rep.row().endswith("PASS")


def test_vacuous_samples_counted():
    F = perturbed(GraphPEnergy(P6, 2.0), Well(0.0, 0.0), [0])
    rep = check_submodular(F, Sampler(P6, seed=2, count=50), project=False)
    assert rep.vacuous > 0 and rep.checked == 50
    assert rep.worst is None or math.isfinite(rep.worst)
