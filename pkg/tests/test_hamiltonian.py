import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import lambertw

from springblock.errors import AccuracyError, DomainError
from springblock.hamiltonian import (
    axis_energy,
    factorization_residual,
    g_factor,
    grad_hamiltonian,
    h_from_yD,
    hamiltonian,
    lambert_roots,
    level_set_z,
    orbit_period,
    trace_closed_orbit,
    trace_level_set,
    yD_from_h,
)


def lambert_oracle(h, xi):
    """Axis crossings from the Lambert W branches: (xi y + 1) e^{-(xi y + 1)} = (1 - h)/e."""
    arg = -(1.0 - h) / math.e
    lower = (-lambertw(arg, 0).real - 1.0) / xi
    upper = (-lambertw(arg, -1).real - 1.0) / xi if h < 1 else None
    return lower, upper


# --- H and g ---------------------------------------------------------------------


def test_hamiltonian_reference_values():
    assert hamiltonian(0.0, 0.0, 0.7) == 0.0
    assert hamiltonian(0.0, 1.0, 0.5) == pytest.approx(0.5 / math.e, rel=1e-14)
    assert hamiltonian(0.0, 1.0, 0.5) == pytest.approx(0.183940, abs=1e-6)
    assert hamiltonian(-2.0, 0.0, 0.5) == pytest.approx(1.0, abs=1e-14)


def test_g_reference_values():
    assert g_factor(0.0, 0.0, 0.5) == pytest.approx(2.0)
    assert g_factor(0.0, 0.0, 1.0) == pytest.approx(1.0)
    assert g_factor(2.0, -1.0, 0.5) == pytest.approx(2.0)


@given(y=st.floats(-3, 3), z=st.floats(-3, 3), xi=st.sampled_from([0.3, 0.5, 1.0]))
def test_factorization_identity(y, z, xi):
    assert factorization_residual(y, z, xi, relative=True) <= 1e-12 or factorization_residual(y, z, xi) <= 1e-14


def test_factorization_at_reference_points():
    assert factorization_residual(0.0, 0.0, 0.5) == 0.0
    assert factorization_residual(1.0, 1.0, 0.5, relative=True) <= 1e-13


@given(y=st.floats(-5, 5), xi=st.floats(0.1, 2.0))
def test_axis_gradient_closed_form(y, xi):
    gy, gz = grad_hamiltonian(y, 0.0, xi)
    assert gy == pytest.approx(xi * xi * y * math.exp(-xi * y), abs=1e-12 * max(1.0, math.exp(-xi * y)))
    assert gz == 0.0


@given(y=st.floats(-3, 3), z=st.floats(-3, 3), xi=st.floats(0.1, 2.0))
def test_gradient_matches_finite_differences(y, z, xi):
    h = 1e-6
    gy = (hamiltonian(y + h, z, xi) - hamiltonian(y - h, z, xi)) / (2 * h)
    gz = (hamiltonian(y, z + h, xi) - hamiltonian(y, z - h, xi)) / (2 * h)
    g = grad_hamiltonian(y, z, xi)
    scale = max(1.0, abs(g[0]), abs(g[1]))
    assert abs(g[0] - gy) <= 1e-6 * scale and abs(g[1] - gz) <= 1e-6 * scale


def test_energy_positive_away_from_origin():
    g = np.linspace(-3, 3, 121)
    Y, Z = np.meshgrid(g, g)
    Hv = hamiltonian(Y, Z, 0.5)
    mask = (Y != 0) | (Z != 0)
    assert np.all(Hv[mask] > 0)
    assert hamiltonian(0.0, 0.0, 0.5) == 0.0


# --- Lambert roots -------------------------------------------------------------------


def test_separatrix_anchor():
    r = lambert_roots(1.0, 0.5)
    assert r.y_lower == pytest.approx(-2.0, abs=1e-10)
    assert r.y_upper is None


def test_reference_roots_against_lambert_w():
    r = lambert_roots(0.4, 0.5)
    lo, up = lambert_oracle(0.4, 0.5)
    assert r.y_lower == pytest.approx(lo, abs=1e-12)
    assert r.y_upper == pytest.approx(up, abs=1e-12)
    assert r.y_lower == pytest.approx(-1.405833, abs=1e-6)
    assert r.y_upper == pytest.approx(2.752842, abs=1e-6)


@given(h=st.floats(1e-6, 5.0), xi=st.floats(0.1, 2.0))
def test_roots_match_lambert_w_and_residuals(h, xi):
    r = lambert_roots(h, xi)
    lo, up = lambert_oracle(h, xi)
    assert r.y_lower == pytest.approx(lo, rel=1e-9, abs=1e-12)
    assert max(r.residuals()) <= 1e-12
    assert r.y_lower < 0
    if h < 1:
        assert r.y_upper == pytest.approx(up, rel=1e-9) and r.y_upper > 0
    else:
        assert r.y_upper is None


def test_root_count_dichotomy():
    for h in list(np.round(np.arange(0.01, 1.0, 0.01), 2)) + [1.0, 1.5, 3.0]:
        r = lambert_roots(float(h), 0.5)
        assert (r.y_upper is not None) == (h < 1)


def test_roots_shrink_to_origin():
    r = lambert_roots(1e-10, 0.5)
    assert abs(r.y_lower) < 1e-4 and abs(r.y_upper) < 1e-4


@pytest.mark.parametrize("h", [0.0, -1.0, math.inf])
def test_roots_domain(h):
    with pytest.raises(DomainError):
        lambert_roots(h, 0.5)


# --- h <-> y_D ---------------------------------------------------------------------------


def test_h_yD_reference():
    assert yD_from_h(h_from_yD(1.7, 0.5), 0.5) == pytest.approx(1.7, abs=1e-10)
    assert h_from_yD(2.753, 0.5) == pytest.approx(0.4, abs=1e-3)
    assert 0 < h_from_yD(1e-8, 0.5) < 1e-15


@given(y=st.floats(1e-3, 60.0), xi=st.floats(0.1, 2.0))
def test_h_yD_inverse(y, xi):
    h = h_from_yD(y, xi)
    if h < 1 - 1e-9:
        assert yD_from_h(h, xi) == pytest.approx(y, rel=1e-8)


def test_h_yD_domain():
    with pytest.raises(DomainError):
        h_from_yD(-1.0, 0.5)
    with pytest.raises(DomainError):
        yD_from_h(1.0, 0.5)


# --- level sets ----------------------------------------------------------------------------


@pytest.mark.parametrize("h", [0.1, 0.4, 0.8])
def test_conservation_over_one_period(h):
    ls = trace_level_set(h, 0.5, tol=1e-8, rtol=1e-10)
    assert ls.kind == "closed"
    assert ls.max_level_error <= 1e-8
    assert ls.closure_gap <= 1e-8


def test_closed_level_through_both_roots():
    ls = trace_level_set(0.4, 0.5)
    r = lambert_roots(0.4, 0.5)
    np.testing.assert_allclose(ls.polyline[0], [r.y_upper, 0.0], atol=1e-12)
    np.testing.assert_allclose(ls.polyline[-1], ls.polyline[0])
    # the orbit reaches the lower root where it crosses z = 0 upward
    k = np.argmin(ls.polyline[:, 0])
    assert ls.polyline[k, 0] == pytest.approx(r.y_lower, abs=1e-5)


def test_periods_small_amplitude_limit_and_dual_route():
    # linear frequency sqrt(xi) at the origin
    assert orbit_period(1e-6, 0.5) == pytest.approx(2 * math.pi / math.sqrt(0.5), rel=1e-3)
    # frozen values: explicit route against the implicit (Radau) route
    for h, T in [(0.1, 9.1213), (0.4, 10.0523), (0.8, 12.6858)]:
        Tn = orbit_period(h, 0.5)
        Ts = float(trace_closed_orbit(h, 0.5, rtol=1e-11, method="stiff").t[-1])
        assert Tn == pytest.approx(T, abs=1e-4)
        assert Ts == pytest.approx(Tn, rel=1e-8)


def test_unbounded_level_graphs():
    ls = trace_level_set(1.0, 0.5)
    assert ls.kind == "unbounded"
    assert ls.y_grid[-1] == pytest.approx(60.0)
    assert ls.max_level_error <= 1e-10
    y, zu, zl = ls.y_grid, ls.z_upper, ls.z_lower
    big = y > 20
    # upper branch asymptotically linear with unit slope, lower branch logarithmic
    slope = np.diff(zu[big]) / np.diff(y[big])
    assert np.all(np.abs(slope - 1.0) < 1e-3)
    assert np.all(np.abs(zl[big] + np.log(y[big])) < 1.0)
    assert np.all(zu >= zl)


def test_level_set_z_misses_outside():
    assert level_set_z(-10.0, 0.4, 0.5) is None
    zu, zl = level_set_z(1.0, 0.4, 0.5)
    assert hamiltonian(1.0, zu, 0.5) == pytest.approx(0.4, abs=1e-13)
    assert hamiltonian(1.0, zl, 0.5) == pytest.approx(0.4, abs=1e-13)


def test_level_set_errors_and_serialization(tmp_path):
    with pytest.raises(DomainError):
        trace_level_set(0.0, 0.5)
    with pytest.raises(AccuracyError):
        trace_level_set(0.4, 0.5, tol=1e-30)
    ls = trace_level_set(0.4, 0.5)
    ls.to_csv(tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "y,z"
    doc = json.loads(ls.to_json())
    assert doc["kind"] == "closed" and doc["period"] == pytest.approx(ls.period)
    assert axis_energy(ls.polyline[0][0], 0.5) == pytest.approx(0.4, abs=1e-12)
