import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from dflow.errors import NotConvexError, ValidationError
from dflow.forms.profiles import (BProfile, PowerLaw, Table, VertexMeasure, Well, ZeroB, integrand_from_dict,
                                  power_delta, weighted_integral)

INTEGRANDS = [
    ZeroB(),
    PowerLaw(1.0, 1.0, 2.0),
    PowerLaw(0.5, 3.0, 1.0),
    PowerLaw(2.0, 0.0, 1.5),
    PowerLaw(1.0, 2.0, 3.7),
    Well(-0.5, 1.0),
    Well(0.0, 0.0),
    Table((-1.0, 0.0, 1.0, 2.0), (2.0, 0.0, 0.5, 3.0)),
    Table((-1.0, 0.5, 1.5), (1.0, 0.5, 4.0), interpolation="step"),
]
sgrid = np.linspace(-3, 3, 601)


@pytest.mark.parametrize("b", INTEGRANDS, ids=repr)
def test_vanishes_at_zero_and_bimonotone(b):
    assert float(b.value(np.array([0.0]))[0]) == 0.0
    v = b.value(sgrid)
    assert np.all(v >= 0)
    right, left = v[sgrid >= 0], v[sgrid <= 0]
    assert np.all(right[1:] >= right[:-1])
    assert np.all(left[1:] <= left[:-1])


@pytest.mark.parametrize("b", INTEGRANDS, ids=repr)
def test_lower_semicontinuous(b):
    """At each breakpoint the value is at most the one-sided limits."""
    pts = list(b.kinks) + list(getattr(b, "points", ())) + list(b.box)
    for s in pts:
        if not math.isfinite(s):
            continue
        at = float(b.value(np.array([s]))[0])
        h = 1e-9
        for side in (s - h, s + h):
            near = float(b.value(np.array([side]))[0])
            assert at <= near + 1e-6


def test_power_law_examples():
    b = PowerLaw(2.0, 3.0, 2.0)
    assert b.value(np.array([1.5, -2.0])).tolist() == [4.5, 12.0]
    assert not b.is_symmetric and PowerLaw(1.0, 1.0, 3.0).is_symmetric
    with pytest.raises(ValidationError):
        PowerLaw(1.0, -1.0, 2.0)
    with pytest.raises(ValidationError):
        PowerLaw(1.0, 1.0, 0.5)


def test_power_law_q1_has_kink_at_zero():
    b = PowerLaw(2.0, 3.0, 1.0)
    assert b.kinks == (0.0,)
    assert b.right_derivative(np.array([0.0]))[0] == 2.0
    assert b.left_derivative(np.array([0.0]))[0] == -3.0
    assert PowerLaw(0.0, 0.0, 1.0).kinks == ()
    assert PowerLaw(1.0, 1.0, 2.0).kinks == ()


def test_well_box_and_values():
    w = Well(-1.0, 2.0)
    assert w.box == (-1.0, 2.0)
    assert w.value(np.array([-1.0, 2.0, 2.5, -1.5])).tolist() == [0.0, 0.0, math.inf, math.inf]
    with pytest.raises(ValidationError):
        Well(0.5, 1.0)


def test_step_table_takes_value_nearer_zero_at_jumps():
    t = Table((-1.0, 0.5, 1.5, 2.0), (1.0, 0.5, 4.0, 4.0), interpolation="step")
    v = t.value(np.array([0.5, 0.50001, 1.5, 1.6, -1.0, -0.5]))
    assert v.tolist() == [0.0, 0.5, 0.5, 4.0, 0.0, 0.0]
    assert t.value(np.array([2.1]))[0] == math.inf and t.value(np.array([-1.1]))[0] == math.inf
    assert not t.is_convex
    with pytest.raises(NotConvexError):
        t.right_derivative(np.array([0.2]))


def test_linear_table_interpolates_and_validates():
    t = Table((-1.0, 0.0, 1.0, 2.0), (2.0, 0.0, 0.5, 3.0))
    assert t.value(np.array([0.5, -0.5, 1.5, 2.5])).tolist() == [0.25, 1.0, 1.75, math.inf]
    assert t.kinks == (0.0, 1.0)
    assert t.is_convex
    assert t.right_derivative(np.array([1.0]))[0] == 2.5
    assert t.left_derivative(np.array([1.0]))[0] == 0.5
    with pytest.raises(ValidationError):
        Table((-1.0, 1.0), (1.0, 1.0))  # nonzero at 0
    with pytest.raises(ValidationError):
        Table((0.0, 1.0, 2.0), (0.0, 2.0, 1.0))  # decreasing on the right
    with pytest.raises(ValidationError):
        Table((0.0, 0.0), (0.0, 1.0))


def test_nonconvex_linear_table_detected():
    assert not Table((0.0, 1.0, 2.0), (0.0, 2.0, 3.0)).is_convex


@pytest.mark.parametrize("b", INTEGRANDS, ids=repr)
def test_serialization_round_trip(b):
    assert integrand_from_dict(b.to_dict()) == b


def test_unknown_integrand_rejected():
    with pytest.raises(ValidationError):
        integrand_from_dict({"type": "cubic"})
    with pytest.raises(ValidationError):
        integrand_from_dict({"type": "power_law", "r": 2})


def test_profile_grouping_and_round_trip():
    prof = BProfile.on(5, [0, 4], PowerLaw(1.0, 2.0, 2.0))
    assert prof.n == 5
    assert prof(0, -1.0) == 2.0 and prof(2, -1.0) == 0.0
    again = BProfile.from_dict(prof.to_dict(), 5)
    assert again == prof and hash(again) == hash(prof)
    assert not prof.is_symmetric
    assert BProfile.uniform(3, ZeroB()).is_symmetric
    with pytest.raises(ValidationError):
        BProfile([])


def test_weighted_integral_zero_mass_annihilates_infinity():
    vals = np.array([math.inf, 2.0, 3.0])
    assert weighted_integral(vals, np.array([0.0, 1.0, 2.0])) == 8.0
    assert weighted_integral(vals, np.array([1.0, 0.0, 0.0])) == math.inf
    assert weighted_integral(vals, np.zeros(3)) == 0.0


def test_vertex_measure():
    mu = VertexMeasure.on(4, [1, 3], 2.5)
    assert mu.support == (1, 3) and mu.total() == 5.0 and mu([1, 2]) == 2.5
    assert (mu + mu).total() == 10.0
    with pytest.raises(ValidationError):
        VertexMeasure([1.0, -1.0])


# -- cancellation-free differences -------------------------------------------------
@given(st.floats(-1e3, 1e3), st.floats(-1e-3, 1e-3), st.sampled_from([1.1, 1.5, 2.0, 2.5, 4.0]))
def test_power_delta_against_high_precision(a, h, q):
    assume(a != 0)
    got, err = power_delta(np.array([a]), np.array([h]), q)
    with mpmath.workdps(400):  # enough to resolve |h| down to the subnormal range
        exact = abs(mpmath.mpf(a) + mpmath.mpf(h)) ** q - abs(mpmath.mpf(a)) ** q
    assert abs(float(got[0]) - float(exact)) <= float(err[0]) + 1e-300


@pytest.mark.parametrize("b", [PowerLaw(1.0, 2.0, 1.5), PowerLaw(3.0, 1.0, 2.0),
                               Table((-1.0, 0.0, 1.0, 2.0), (2.0, 0.0, 0.5, 3.0))], ids=repr)
def test_integrand_delta_matches_direct_difference(b):
    rng = np.random.default_rng(0)
    a = rng.uniform(-0.9, 1.9, 200)
    h = rng.uniform(-1e-2, 1e-2, 200)
    lo, hi = b.box
    keep = (a + h > lo) & (a + h < hi)
    a, h = a[keep], h[keep]
    d, err = b.delta(a, h)
    direct = b.value(a + h) - b.value(a)
    assert np.all(np.abs(d - direct) <= err + 1e-13 * (np.abs(b.value(a)) + 1))
