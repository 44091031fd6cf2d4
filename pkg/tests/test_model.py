import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from springblock.errors import DomainError, RangeError
from springblock.model import (
    Params,
    PhysicalParams,
    critical_manifold_z,
    defect,
    fast_rhs,
    jacobian_fast,
    jacobian_reduced,
    jacobian_slow,
    layer_rhs,
    layer_rhs_dz,
    lift_to_critical,
    linfinity_nullcline_x,
    nondimensionalize,
    project_to_reduced,
    reduced_field,
    reduced_rhs,
    slow_field,
    slow_rhs,
    trace_slow,
)

coord = st.floats(-3, 3)
pos = st.floats(0.05, 2.0)
eps_s = st.floats(1e-4, 0.1)


def fd(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.array(cols).T


# --- parameters ---------------------------------------------------------------


def test_nondimensionalize_reference_values():
    p = nondimensionalize(PhysicalParams(1, 1, 1, 2, 20, 1))
    assert (p.epsilon, p.xi, p.alpha) == pytest.approx((1.0, 0.5, 0.9))
    p = nondimensionalize(PhysicalParams(1, 1, 1, 1, 1, 1))
    assert (p.epsilon, p.xi, p.alpha) == pytest.approx((1.0, 1.0, 0.0))


@given(c=st.floats(0.1, 10.0))
def test_nondimensionalize_scaling_in_a(c):
    base = nondimensionalize(PhysicalParams(2.0, 3.0, 0.5, 0.1, 0.3, 0.7))
    scaled = nondimensionalize(PhysicalParams(2.0, 3.0, 0.5, 0.1 * c, 0.3 * c, 0.7))
    assert scaled.xi == pytest.approx(base.xi / c, rel=1e-12)
    assert scaled.epsilon == pytest.approx(base.epsilon, rel=1e-12)
    assert scaled.alpha == pytest.approx(base.alpha, rel=1e-12)


@pytest.mark.parametrize("bad", [(0, 1, 1, 1, 1, 1), (1, -1, 1, 1, 1, 1), (1, 1, 1, 1, 1, 0)])
def test_physical_params_must_be_positive(bad):
    with pytest.raises(DomainError):
        nondimensionalize(PhysicalParams(*bad))


def test_params_validation():
    with pytest.raises(DomainError):
        Params(1e-2, 0.0, 0.9)
    with pytest.raises(DomainError):
        Params(-1e-2, 0.5, 0.9)
    with pytest.raises(DomainError):
        Params(0.0, 0.5, 0.9).require_full()
    assert Params(1e-2, 0.5, 0.9).replace(alpha=0.5).alpha == 0.5


# --- fields -------------------------------------------------------------------


def test_slow_rhs_reference_point():
    v = slow_rhs([0.0, 0.0, 1.0], Params(1e-2, 0.5, 0.9))
    assert v == pytest.approx([-1.9 * math.e, math.e - 1, -200 / math.e], rel=1e-12)
    assert v == pytest.approx([-5.164735, 1.718282, -73.575888], abs=1e-6)


def test_fast_and_reduced_reference_points():
    # -(y + (x + z)/xi) at (0, 1, 0) is -1 for any xi
    assert fast_rhs([0.0, 1.0, 0.0], Params(0.0, 0.5, 0.3)) == pytest.approx([0, 0, -1])
    assert fast_rhs([1.0, 0.0, 0.0], Params(0.0, 0.5, 0.3)) == pytest.approx([0, 0, -2])
    assert reduced_rhs([0.0, 1.0], 0.5, 0.9) == pytest.approx([math.e - 1, 0.5 + 0.4 * math.e], rel=1e-12)
    assert reduced_rhs([1.0, 0.0], 0.5, 0.2) == pytest.approx([0.0, -0.5])
    assert layer_rhs(0.0, 0.0, 1.0, 0.5) == pytest.approx(-1.0)
    assert layer_rhs(0.0, 1.0, 0.0, 0.5) == pytest.approx(-2.0)


def test_slow_rhs_needs_eps():
    with pytest.raises(DomainError):
        slow_rhs([0, 0, 0], Params(0.0, 0.5, 0.9))


def test_overflow_reported_as_range_error():
    with pytest.raises(RangeError):
        slow_rhs([0.0, 0.0, 800.0], Params(1e-2, 0.5, 0.9))
    with pytest.raises(RangeError):
        reduced_rhs([0.0, 800.0], 0.5, 0.9)


@given(xi=pos, a=st.floats(-1, 2), eps=eps_s)
def test_origin_is_equilibrium(xi, a, eps):
    p = Params(eps, xi, a)
    assert np.all(slow_rhs([0, 0, 0], p) == 0)
    assert np.all(fast_rhs([0, 0, 0], p) == 0)
    assert np.all(reduced_rhs([0, 0], xi, a) == 0)


@given(x=coord, y=coord, z=coord, xi=pos, a=st.floats(0, 2), eps=eps_s)
def test_fast_is_eps_times_slow(x, y, z, xi, a, eps):
    p = Params(eps, xi, a)
    np.testing.assert_allclose(fast_rhs([x, y, z], p), eps * slow_rhs([x, y, z], p), rtol=4e-15, atol=1e-300)


@given(x=st.floats(-10, 10), y=st.floats(-10, 10), xi=pos)
def test_layer_vanishes_on_critical_manifold(x, y, xi):
    z = critical_manifold_z(x, y, xi)
    # cancellation in y + (x + z)/xi: roundoff of z is amplified by 1/xi
    scale = abs(y) + (abs(x) + abs(z)) / xi
    assert abs(layer_rhs(z, x, y, xi)) <= 4e-16 * scale * math.exp(-z) + 1e-300
    # attracting with rate e^{-z}/xi
    assert layer_rhs_dz(z, x, y, xi) == pytest.approx(-math.exp(-z) / xi, rel=1e-12)


@given(x=coord, y=coord, xi=pos, a=st.floats(0, 2), eps=eps_s)
def test_slow_rhs_z_vanishes_on_critical_manifold(x, y, xi, a, eps):
    z = critical_manifold_z(x, y, xi)
    assert abs(slow_rhs([x, y, z], Params(eps, xi, a))[2]) <= 1e-10 * math.exp(-z) / eps


def test_linear_formulas():
    assert critical_manifold_z(0, 0, 0.5) == 0
    assert critical_manifold_z(1, 2, 0.5) == -2
    assert critical_manifold_z(-1, 2, 0.5) == 0
    assert linfinity_nullcline_x(0, 0.9) == 0
    assert linfinity_nullcline_x(1, 0.9) == pytest.approx(-1.9)
    assert linfinity_nullcline_x(-1, 0.5) == pytest.approx(1.5)


# --- Jacobians -------------------------------------------------------------------


def test_reduced_jacobian_at_origin():
    J = jacobian_reduced([0, 0], 0.5, 0.5)
    assert np.trace(J) == pytest.approx(0.0)
    assert np.linalg.det(J) == pytest.approx(0.5)
    assert np.trace(jacobian_reduced([0, 0], 0.5, 0.9)) == pytest.approx(0.4)
    np.testing.assert_allclose(jacobian_reduced([0, 0], 0.7, 0.2), [[0, 1], [-0.7, 0.2 - 0.7]], atol=1e-15)


@given(y=coord, z=coord, xi=pos, a=st.floats(0, 2))
def test_reduced_jacobian_matches_fd(y, z, xi, a):
    J = jacobian_reduced([y, z], xi, a)
    Jf = fd(lambda s: reduced_rhs(s, xi, a), [y, z])
    assert np.max(np.abs(J - Jf)) <= 1e-5 * max(1.0, np.max(np.abs(J)))


@given(x=coord, y=coord, z=coord, xi=pos, a=st.floats(0, 2), eps=eps_s)
def test_full_jacobians_match_fd(x, y, z, xi, a, eps):
    p = Params(eps, xi, a)
    s = [x, y, z]
    for jac, rhs in ((jacobian_slow, slow_rhs), (jacobian_fast, fast_rhs)):
        J = jac(s, p)
        Jf = fd(lambda v: rhs(v, p), s)
        assert np.max(np.abs(J - Jf)) <= 1e-5 * max(1.0, np.max(np.abs(J)))
    assert trace_slow(s, p) == pytest.approx(np.trace(jacobian_slow(s, p)), rel=1e-12)


@given(x=coord, y=coord, z=coord, xi=pos, a=st.floats(0, 2), eps=eps_s)
def test_closures_agree_with_plain_fields(x, y, z, xi, a, eps):
    p = Params(eps, xi, a)
    f, jac = slow_field(p)
    np.testing.assert_allclose(f(0.0, np.array([x, y, z])), slow_rhs([x, y, z], p), rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(jac(0.0, np.array([x, y, z])), jacobian_slow([x, y, z], p), rtol=1e-13, atol=1e-13)
    fr, jr = reduced_field(xi, a)
    np.testing.assert_allclose(fr(0.0, np.array([y, z])), reduced_rhs([y, z], xi, a), rtol=1e-13, atol=1e-13)
    fb, _ = reduced_field(xi, a, sign=-1.0)
    np.testing.assert_allclose(fb(0.0, np.array([y, z])), -fr(0.0, np.array([y, z])), rtol=0, atol=0)


# --- projections -------------------------------------------------------------------


@given(y=coord, z=coord, xi=pos)
def test_lift_and_project_round_trip(y, z, xi):
    s3 = lift_to_critical([y, z], xi)
    assert defect(s3, xi) == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(project_to_reduced(s3, xi), [y, z], atol=1e-15)
    np.testing.assert_allclose(project_to_reduced(s3, xi, mode="critical"), [y, z], atol=1e-14)
