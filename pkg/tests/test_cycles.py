import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from springblock.cycles import (
    BifurcationRow,
    bifurcation_diagram,
    build_gamma0,
    crossing_energies,
    dichotomy_check,
    find_limit_cycle,
    finite_time_blowup,
    fit_power_law,
    hausdorff,
    hausdorff_to_gamma0,
    polyline_hausdorff,
    return_map,
    trace_separatrix,
    wcs_seed,
    wcu_seed,
    write_bifurcation_csv,
)
from springblock.errors import DomainError
from springblock.hamiltonian import hamiltonian, orbit_period
from springblock.model import Params, slow_field
from springblock.odecore import IntegratorConfig, integrate
from springblock.perturbation import alpha_M

XI = 0.5


@pytest.fixture(scope="module")
def gamma0():
    return build_gamma0(0.9, XI)


@pytest.fixture(scope="module")
def cycle_e2():
    return find_limit_cycle(Params(1e-2, XI, 0.9))


# --- singular cycle -------------------------------------------------------------------


def _k3_coords(pts):
    # sphere (X, Y, Z, W) -> K3_3D (x3, y3, w3) = (X/Z, Y/Z, W/Z)
    return pts[:, [0, 1, 3]] / pts[:, [2]]


def _k1_coords(pts):
    # sphere -> K1_3D (x1, z1, w1) = (X/Y, Z/Y, W/Y)
    return pts[:, [0, 2, 3]] / pts[:, [1]]


def test_gamma0_segments_and_corners(gamma0):
    assert [t for t, _ in gamma0.segments] == ["gamma12", "gamma24", "gamma45", "gamma56", "Wcu"]
    assert gamma0.max_junction_gap() <= 1e-8
    name, c4 = gamma0.corner_chart_coords["Q4"]
    assert name == "K3_3D"
    assert c4[1] == pytest.approx(3.6, abs=1e-14)
    for pts in (p for _, p in gamma0.segments):
        np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-14)
        assert np.all(pts[:, 3] >= 0)


def test_gamma45_vertical_fibre(gamma0):
    k = _k1_coords(gamma0.segment("gamma45"))
    np.testing.assert_allclose(k[:, 0], -19 / 36, atol=1e-12)
    np.testing.assert_allclose(k[:, 2], 0.0, atol=1e-15)
    assert {round(k[0, 1], 12), round(k[-1, 1], 12)} == {round(5 / 18, 12), round(1 / 36, 12)}


def test_gamma24_on_L0_and_gamma56_on_critical_line(gamma0):
    k3 = _k3_coords(gamma0.segment("gamma24"))
    np.testing.assert_allclose(k3[:, 0], -1.9, atol=1e-12)
    np.testing.assert_allclose(k3[:, 2], 0.0, atol=1e-15)
    k1 = _k1_coords(gamma0.segment("gamma56"))
    np.testing.assert_allclose(k1[:, 0] + k1[:, 1] + XI, 0.0, atol=1e-12)
    np.testing.assert_allclose(k1[:, 2], 0.0, atol=1e-15)


def test_gamma12_on_axis(gamma0):
    k3 = _k3_coords(gamma0.segment("gamma12"))
    assert k3[0, 0] == pytest.approx(-1.0) and k3[-1, 0] == pytest.approx(-1.9)
    np.testing.assert_allclose(k3[:, 1:], 0.0, atol=1e-15)


def test_gamma0_needs_alpha_above_xi():
    with pytest.raises(DomainError):
        build_gamma0(0.5, 0.5)
    with pytest.raises(DomainError):
        build_gamma0(0.4, 0.5)


def test_gamma0_serialisation(gamma0, tmp_path):
    doc = json.loads(gamma0.to_json())
    assert [c["name"] for c in doc["corners"]] == ["Q1", "Q2", "Q4", "Q5", "Q6"]
    q5 = [c for c in doc["corners"] if c["name"] == "Q5"][0]
    np.testing.assert_allclose(q5["chart_coords"], (-19 / 36, 1 / 36, 0.0), atol=1e-15)
    path = tmp_path / "g.csv"
    gamma0.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "segment,X,Y,Z,W"
    assert len(lines) == 1 + len(gamma0.all_points())


# --- separatrices ---------------------------------------------------------------------


def test_hamiltonian_separatrices_cross_at_minus_two():
    for kind in ("Wcu", "Wcs"):
        tr = trace_separatrix(kind, 0.5, 0.5, continue_after_axis=False)
        assert tr.crossing_y == pytest.approx(-2.0, abs=1e-4)
        assert tr.max_level_error(1.0) <= 1e-6


def test_wcu_follows_level_one_to_q1():
    tr = trace_separatrix("Wcu", 0.5, 0.5)
    assert tr.status == "q1"
    assert tr.max_level_error(1.0) <= 1e-6
    assert "K3_2D" in tr.charts
    assert np.all(np.diff(tr.t_physical) >= 0)


def test_seeds_on_tangency_directions():
    # Wcs seed satisfies the implicit level-one relation of the Z = 1 chart
    w, y3 = wcs_seed(0.5, 0.5)
    assert abs(0.5 * (y3 - 1) + w * 1.5 - 0.5 * w * math.exp(-1 / w)) <= 1e-12
    # Wcu seed sits on H = 1 at alpha = xi, a chordal 1e-4 from Q6
    (y, z), (rho, eta) = wcu_seed(0.5, 0.5, 1e-4)
    assert abs(hamiltonian(y, z, 0.5) - 1.0) <= 1e-6
    v = np.array([y, z, 1.0]) / math.sqrt(y * y + z * z + 1.0)
    assert np.linalg.norm(v - [1, 0, 0]) == pytest.approx(1e-4, rel=1e-6)
    assert rho == pytest.approx(-1 / z)
    with pytest.raises(DomainError):
        wcs_seed(0.5, 0.5, 0.0)
    with pytest.raises(DomainError):
        wcu_seed(0.5, 0.5, 0.5)


def test_separatrices_split_above_xi():
    # outward spiral: the unstable separatrix returns outside level one
    cu = trace_separatrix("Wcu", 0.55, 0.5, continue_after_axis=False)
    cs = trace_separatrix("Wcs", 0.55, 0.5)
    assert cu.crossing_energy > 1.0 > cs.crossing_energy


def test_separatrix_bad_kind():
    with pytest.raises(DomainError):
        trace_separatrix("Ws", 0.5, 0.5)


# --- blow-up and dichotomy ---------------------------------------------------------------


def test_finite_time_blowup_hamiltonian():
    z0 = brentq(lambda z: hamiltonian(0.0, z, 0.5) - 1.5, 1.0, 10.0, xtol=1e-15)
    r = finite_time_blowup(0.5, 0.5, (0.0, z0))
    assert math.isfinite(r.t_star) and r.t_star > 0
    assert abs(r.estimates[1e-2] - r.estimates[1e-3]) < 1e-4
    assert r.cauchy_differences[-1] <= r.cauchy_differences[0]
    assert r.path_charts[-1] == "K3_2D"


def test_finite_time_blowup_above_xi():
    r = finite_time_blowup(0.9, 0.5, (0.0, 1.0))
    assert 0 < r.t_star < 10
    assert r.cauchy_differences[-1] < 1e-4


def test_blowup_preconditions():
    z0 = brentq(lambda z: hamiltonian(0.0, z, 0.5) - 0.5, 0.01, 10.0)
    with pytest.raises(DomainError):
        finite_time_blowup(0.5, 0.5, (0.0, z0))
    with pytest.raises(DomainError):
        finite_time_blowup(0.45, 0.5, (0.0, 1.0))


def test_outward_spiral_energies():
    hs, status = crossing_energies(0.55, 0.5, (0.01, 0.0))
    assert hs.size >= 5
    assert np.all(np.diff(hs) > 0)
    assert status in ("escape", "q1")


def test_dichotomy_below_xi():
    d = dichotomy_check(0.45, 0.5)
    assert d["wcs_crossing"] < -2.0
    assert all(d["fates"][y] == "origin" for y in d["inside"])
    assert all(d["fates"][y] == "q1" for y in d["outside"])
    with pytest.raises(DomainError):
        dichotomy_check(0.55, 0.5)


# --- limit cycles ------------------------------------------------------------------------


def test_cycle_stable_at_eps_1e2(cycle_e2):
    c = cycle_e2
    assert c.stable
    assert c.max_nontrivial_modulus < 1.0
    assert abs(c.trivial_multiplier - 1.0) <= 1e-4
    assert c.closure_gap <= 1e-8
    assert c.amplitude_y == pytest.approx(c.y_max - c.y_min)
    assert c.section_point[2] == 0.0


def test_cycle_return_after_two_periods(cycle_e2):
    c = cycle_e2
    f, jac = slow_field(c.params)
    tr = integrate(f, jac, c.section_point, (0.0, 2 * c.period),
                   IntegratorConfig(rtol=1e-10, atol=(1e-12, 1e-12, 1e-11)))
    tol = 1e-9 * max(1.0, float(np.linalg.norm(c.section_point)))
    assert np.linalg.norm(tr.final - c.section_point) <= 10 * tol


def test_return_map_fixed_point(cycle_e2):
    c = cycle_e2
    u, T, _ = return_map(c.params, c.section_point[:2])
    assert T == pytest.approx(c.period, rel=1e-8)
    np.testing.assert_allclose(u, c.section_point[:2], atol=1e-7)
    with pytest.raises(DomainError):
        return_map(c.params, (-0.5, 0.5))  # y + x/xi < 0 gives z' > 0


def test_cycle_serialisation(cycle_e2, tmp_path):
    d = json.loads(cycle_e2.to_json())
    assert d["stable"] is True
    assert len(d["multipliers"]) == 3
    path = tmp_path / "c.csv"
    cycle_e2.to_csv(path)
    head = path.read_text().splitlines()[0].split(",")
    assert head[-1] == "defect"


def test_amplitude_grows_as_eps_shrinks(cycle_e2):
    c5 = find_limit_cycle(Params(1e-5, XI, 0.9), compute_floquet=False)
    assert c5.amplitude_y > cycle_e2.amplitude_y


def test_cycle_at_melnikov_alpha():
    eps = 1e-3
    a = alpha_M(0.4, XI, eps).alpha_M
    c = find_limit_cycle(Params(eps, XI, a), compute_floquet=False)
    assert c.axis_energy == pytest.approx(0.4, abs=0.02)
    assert abs(c.period - orbit_period(0.4, XI)) <= 50 * eps


def test_abel_liouville_with_trace_chunks():
    c = find_limit_cycle(Params(0.1, XI, 0.5), chunk_trace=5.0)
    assert c.diagnostics["abel_liouville_rel_error"] <= 1e-3
    d = c.diagnostics
    assert d["log_abs_det_qr"] == pytest.approx(d["trace_integral"], rel=1e-3)


def test_cycle_domain():
    with pytest.raises(DomainError):
        find_limit_cycle(Params(1e-3, XI, 0.49))
    with pytest.raises(DomainError):
        find_limit_cycle(Params(0.2, XI, 0.9))
    with pytest.raises(DomainError):
        find_limit_cycle(Params(1e-7, XI, 0.9))


# --- distances --------------------------------------------------------------------------


def test_hausdorff_identical_is_zero(gamma0):
    polys = [p for _, p in gamma0.segments]
    assert polyline_hausdorff(polys, polys) == 0.0


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_hausdorff_metric_properties(seed):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(20, 4)), rng.normal(size=(15, 4))
    dab = hausdorff(A, B)
    assert dab == hausdorff(B, A)
    assert dab >= 0
    assert hausdorff(A, A) == 0.0
    C = rng.normal(size=(10, 4))
    assert hausdorff(A, C) <= dab + hausdorff(B, C) + 1e-12


def test_distance_to_superset(cycle_e2, gamma0):
    full = hausdorff_to_gamma0(cycle_e2, gamma0)
    part = hausdorff_to_gamma0(cycle_e2, gamma0.without("gamma45"))
    assert 0 < full <= part


def test_distance_needs_matching_params(cycle_e2):
    with pytest.raises(DomainError):
        hausdorff_to_gamma0(cycle_e2, build_gamma0(0.8, XI))


# --- bifurcation -------------------------------------------------------------------------


def test_bifurcation_gap_rows(tmp_path):
    rows = bifurcation_diagram(XI, "alpha", [0.45], eps=1e-3)
    assert rows[0].status.startswith("gap")
    assert math.isnan(rows[0].amplitude)
    path = tmp_path / "b.csv"
    write_bifurcation_csv(path, rows + [BifurcationRow(0.9, 1.0, 2.0, 0.5, "ok")])
    lines = path.read_text().splitlines()
    assert lines[0] == "param,amplitude,period,max_multiplier,status"
    assert lines[2] == "0.9,1.0,2.0,0.5,ok"


def test_bifurcation_mode_errors():
    with pytest.raises(DomainError):
        bifurcation_diagram(XI, "alpha", [0.9])
    with pytest.raises(DomainError):
        bifurcation_diagram(XI, "eps", [1e-3])
    with pytest.raises(DomainError):
        bifurcation_diagram(XI, "beta", [1e-3], eps=1e-3)


@given(st.floats(0.2, 3.0), st.floats(0.1, 10.0))
def test_power_law_fit_recovers_exponent(k, c):
    x = np.array([1e-4, 3e-4, 1e-3, 3e-3])
    kf, cf = fit_power_law(x, c * x**k)
    assert kf == pytest.approx(k, abs=1e-9)
    assert cf == pytest.approx(c, rel=1e-8)
