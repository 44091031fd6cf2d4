"""Small-epsilon theory: slow manifold, perturbed reduced field, Hopf and Melnikov data.

The Melnikov integrals measure the energy gained by one loop of a closed
Hamiltonian orbit under a perturbation of the alpha = xi reduced field:

    delta_alpha(h) = oint grad H . d f0 / d alpha dt
    delta_eps(h)   = oint grad H . d f_eps / d eps dt   (at alpha = xi, eps = 0)

and periodic orbits of energy h persist where
``(alpha - xi) delta_alpha + eps delta_eps = 0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import AccuracyError, DomainError, SearchError
from .hamiltonian import grad_hamiltonian, lambert_roots, level_set_z, trace_closed_orbit
from .model import Params, _split2, jacobian_slow, safe_exp, slow_field
from .odecore import EventSpec, IntegratorConfig, integrate, quad_adaptive

# keep Melnikov grids inside 0 <= H <= 1 - margin, where the slow manifold is normally hyperbolic
DEFAULT_MARGIN = 0.05


def slow_manifold_z(x, y, p: Params):
    """First-order slow manifold z = z_s(x, y) near the critical manifold."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = x + p.xi * y
    if p.epsilon == 0:
        return -u + 0.0
    corr = p.epsilon * p.xi * safe_exp(-2.0 * u) * (p.alpha * u + p.xi * (y + 1.0) - p.xi * safe_exp(u))
    return -u + corr


def slow_manifold_gradient(x, y, p: Params):
    """(dz_s/dx, dz_s/dy) of :func:`slow_manifold_z`."""
    xi, a, eps = p.xi, p.alpha, p.epsilon
    u = float(x) + xi * float(y)
    e2 = math.exp(-2.0 * u)
    bracket = a * u + xi * (float(y) + 1.0) - xi * math.exp(u)
    dx = -1.0 + eps * xi * e2 * (-2.0 * bracket + a - xi * math.exp(u))
    dy = -xi + eps * xi * e2 * (-2.0 * xi * bracket + a * xi + xi - xi * xi * math.exp(u))
    return dx, dy


def slow_manifold_defect(x, y, p: Params, order: int = 1) -> float:
    """Invariance defect of the slow manifold in fast time.

    Returns eps z' - eps grad z_s . (x', y') at z = z_s(x, y); order 0 uses the
    critical manifold instead.  The defect is O(eps) for order 0 and O(eps^2)
    for order 1.
    """
    q = p if order == 1 else p.replace(epsilon=0.0)
    z = float(slow_manifold_z(x, y, q))
    gx, gy = slow_manifold_gradient(x, y, q)
    ez = math.exp(z)
    xdot = -ez * (x + (1.0 + p.alpha) * z)
    ydot = math.expm1(z)
    fast_z = -math.exp(-z) * (y + (x + z) / p.xi)
    return fast_z - p.epsilon * (gx * xdot + gy * ydot)


def chi(y, z, xi: float, alpha: float):
    """chi(y, z) = alpha z e^z - xi y e^z - xi e^z + xi (the reduced z-velocity)."""
    ez = safe_exp(np.asarray(z, dtype=float))
    return alpha * z * ez - xi * y * ez - xi * ez + xi


def f_eps_rhs(s, p: Params):
    """Reduced field on the slow manifold, truncated after the O(eps) terms.

    Coordinates are (y, z) with z the critical-manifold value -(x + xi y).
    """
    y, z = _split2(s)
    xi, a, eps = p.xi, p.alpha, p.epsilon
    c = chi(y, z, xi, a)
    e2 = safe_exp(2.0 * z)
    return np.array([
        np.expm1(z) - eps * xi * c * e2,
        c - eps * xi * c * e2 * (a * z - xi * y + a - xi + 1.0),
    ])


def df_eps_d_eps(s, xi: float):
    """Analytic d f_eps / d eps at alpha = xi, eps = 0."""
    y, z = _split2(s)
    c = chi(y, z, xi, xi)
    e2 = safe_exp(2.0 * z)
    return np.array([-xi * c * e2, -xi * c * e2 * (xi * z - xi * y + 1.0)])


def df0_d_alpha(s):
    """d f0 / d alpha = (0, z e^z)."""
    y, z = _split2(s)
    return np.array([np.zeros_like(z), z * safe_exp(z)])


def delta_alpha_integrand(y, z, xi: float):
    """grad H . d f0/d alpha = xi e^{-xi y} z (e^z - 1)."""
    return xi * safe_exp(-xi * np.asarray(y, dtype=float)) * z * np.expm1(z)


def delta_eps_integrand(y, z, xi: float):
    """grad H . d f_eps/d eps evaluated at (alpha, eps) = (xi, 0)."""
    g = grad_hamiltonian(y, z, xi)
    d = df_eps_d_eps(np.array([y, z], dtype=float), xi)
    return g[0] * d[0] + g[1] * d[1]


# --- Hopf data --------------------------------------------------------------


def hopf_alpha(xi: float, eps: float) -> float:
    """Leading-order Hopf value alpha_H = xi - eps xi^2."""
    if eps < 0:
        raise DomainError("eps must be nonnegative")
    return xi - eps * xi * xi


def lyapunov_coefficient(xi: float, eps: float) -> float:
    """Leading-order first Lyapunov coefficient a = -eps xi^3 (1 + xi) / 8."""
    if eps < 0:
        raise DomainError("eps must be nonnegative")
    return -0.125 * eps * xi**3 * (1.0 + xi)


@dataclass(frozen=True)
class HopfData:
    xi: float
    eps: float
    alpha_H: float
    alpha_H_numeric: float
    lyapunov_a: float
    criticality: str
    frequency: float

    def as_dict(self):
        return dict(self.__dict__)


def _origin_pair_real(alpha, xi, eps):
    J = jacobian_slow(np.zeros(3), Params(eps, xi, alpha))
    w = np.linalg.eigvals(J)
    c = w[np.abs(w.imag) > 0]
    if c.size == 0:
        return math.nan, 0.0
    k = int(np.argmax(c.real))
    return float(c[k].real), float(abs(c[k].imag))


def hopf_locate_numeric(xi: float, eps: float, xtol: float = 1e-15) -> HopfData:
    """Locate the Hopf value of the full 3D system by bisection on eigenvalues.

    Searches alpha in [xi - 10 xi^2 eps, xi] for the zero of the real part of
    the complex eigenvalue pair at the origin.
    """
    if not (0 < eps <= 0.1):
        raise DomainError("eps must lie in (0, 0.1]")
    if xi <= 0:
        raise DomainError("xi must be positive")
    a, b = xi - 10.0 * xi * xi * eps, xi
    fa = _origin_pair_real(a, xi, eps)[0]
    fb = _origin_pair_real(b, xi, eps)[0]
    if not (math.isfinite(fa) and math.isfinite(fb)) or fa * fb > 0:
        raise SearchError("no sign change of the complex-pair real part in the bracket")
    root = brentq(lambda al: _origin_pair_real(al, xi, eps)[0], a, b, xtol=xtol, rtol=1e-15)
    la = lyapunov_coefficient(xi, eps)
    return HopfData(xi=xi, eps=eps, alpha_H=hopf_alpha(xi, eps), alpha_H_numeric=root,
                    lyapunov_a=la, criticality="super" if la < 0 else "sub",
                    frequency=_origin_pair_real(root, xi, eps)[1])


def section_energies(p: Params, y0: float, t_max: float, rtol: float = 1e-9):
    """Energies H(y, 0) at successive crossings of {z = 0, z' < 0} of the full system.

    The orbit starts on the critical manifold at (-xi y0, y0, 0).
    Returns (times, energies).
    """
    from .hamiltonian import axis_energy

    f, jac = slow_field(p)
    cfg = IntegratorConfig(rtol=rtol, atol=(1e-12, 1e-12, 1e-11))
    ev = EventSpec(lambda t, s: s[2], direction=-1, name="section")
    tr = integrate(f, jac, [-p.xi * y0, y0, 0.0], (0.0, t_max), cfg, [ev])
    ts = np.array([e.t for e in tr.events])
    hs = np.array([axis_energy(e.state[1], p.xi) for e in tr.events])
    return ts, hs


def supercriticality_check(xi: float, eps: float, offset: float = 0.5, r0: float = 1e-2,
                           t_max: Optional[float] = None, rtol: float = 1e-8):
    """Trajectory test of the Hopf criticality on both sides of the Hopf point.

    Integrates the full system at alpha_H_numeric -/+ offset*eps from a point
    at distance ``r0`` from the origin and reports the section energies.
    Below the Hopf point they must decay; above it they must grow and level
    off (a small attracting cycle).
    """
    hd = hopf_locate_numeric(xi, eps)
    if t_max is None:
        # enough e-foldings of the linear growth rate ~ offset*eps/2 to saturate
        t_max = 8.0 / (0.5 * offset * eps)
    out = {"hopf": hd.as_dict()}
    for side, sgn in (("below", -1.0), ("above", 1.0)):
        p = Params(eps, xi, hd.alpha_H_numeric + sgn * offset * eps)
        t_side = t_max if sgn > 0 else t_max / 4
        ts, hs = section_energies(p, r0, t_side, rtol)
        out[side] = {"alpha": p.alpha, "t": ts, "h": hs}
    below = out["below"]["h"]
    above = out["above"]["h"]
    out["decays_below"] = bool(below.size > 2 and below[-1] < below[0] and np.all(np.diff(below) < 0))
    tail = above[-max(3, above.size // 10):]
    out["grows_above"] = bool(above.size > 2 and above[-1] > 10 * above[0])
    out["saturates_above"] = bool(tail.size > 1 and abs(tail[-1] - tail[0]) < 0.02 * tail[-1])
    out["final_energy_above"] = float(above[-1]) if above.size else math.nan
    return out


# --- Melnikov integrals -------------------------------------------------------


def _orbit_integral(h, xi, integrand, tol):
    tr = trace_closed_orbit(h, xi, rtol=1e-12)
    if not tr.events:
        raise AccuracyError("closed orbit did not return to the section")
    T = float(tr.t[-1])

    def fun(t):
        s = tr(t)
        return integrand(s[0], s[1], xi)

    # per-step pieces keep the piecewise-polynomial dense output smooth on each piece
    total = 0.0
    err = 0.0
    knots = tr.t
    for a, b in zip(knots[:-1], knots[1:]):
        v, e = quad_adaptive(fun, a, b, tol=tol, limit=200)
        total += v
        err += e
    if not err <= tol:
        raise AccuracyError(f"quadrature error estimate {err:.3g} exceeds tol {tol:.3g}")
    return total, err, T


def _h1_bound_constant(xi):
    # |integrand| <= xi e^{-xi y}(2y + 3 + 2/xi) <= C e^{-xi y/2}
    b = 0.5 * (3.0 + 2.0 / xi)
    return 4.0 * math.exp(-1.0 + 0.5 * xi * b)


def delta_alpha(h: float, xi: float, tol: float = 1e-9, route: str = "time") -> float:
    """Melnikov coefficient delta_alpha(h) for h in (0, 1].

    ``route="time"`` integrates along the traced orbit in time,
    ``route="graph"`` integrates xi e^{-xi y}(z_upper - z_lower) dy between the
    y-axis crossings.  h = 1 always uses the graph form on [-1/xi, inf) with an
    analytic exponential tail bound.
    """
    return delta_alpha_with_error(h, xi, tol, route)[0]


def delta_alpha_with_error(h: float, xi: float, tol: float = 1e-9, route: str = "time"):
    if not (0 < h <= 1):
        raise DomainError("h must lie in (0, 1]")
    if h == 1.0 or route == "graph":
        roots = lambert_roots(h, xi)
        d = roots.y_lower

        def gfun(yy):
            r = level_set_z(yy, h, xi)
            if r is None:
                return 0.0
            return xi * math.exp(-xi * yy) * (r[0] - r[1])

        if h == 1.0:
            # split at a few scales so quad sees the slowly decaying part first
            v1, e1 = quad_adaptive(gfun, d, 10.0 / xi, tol=tol / 2, limit=500)
            v2, e2 = quad_adaptive(gfun, 10.0 / xi, math.inf, tol=tol / 2,
                                   decay=(0.5 * xi, _h1_bound_constant(xi)), limit=500)
            return v1 + v2, e1 + e2
        D = roots.y_upper
        # cosine substitution removes the square-root endpoint behaviour
        def th(theta):
            yy = d + (D - d) * 0.5 * (1.0 - math.cos(theta))
            return gfun(yy) * (D - d) * 0.5 * math.sin(theta)

        return quad_adaptive(th, 0.0, math.pi, tol=tol, limit=500)
    if route != "time":
        raise DomainError(f"unknown route {route!r}")
    v, e, _ = _orbit_integral(h, xi, delta_alpha_integrand, tol)
    return v, e


def delta_eps(h: float, xi: float, tol: float = 1e-9) -> float:
    """Melnikov coefficient delta_eps(h) for h in (0, 1)."""
    return delta_eps_with_error(h, xi, tol)[0]


def delta_eps_with_error(h: float, xi: float, tol: float = 1e-9):
    if not (0 < h < 1):
        raise DomainError("h must lie in (0, 1)")
    v, e, _ = _orbit_integral(h, xi, delta_eps_integrand, tol)
    return v, e


@dataclass(frozen=True)
class MelnikovResult:
    h: float
    xi: float
    eps: float
    delta_alpha: float
    delta_eps: float
    alpha_M: float
    quadrature_error_estimate: float

    @property
    def ratio(self) -> float:
        """delta_eps / delta_alpha, so that alpha_M = xi - eps * ratio."""
        return self.delta_eps / self.delta_alpha

    def row(self):
        return [self.h, self.delta_alpha, self.delta_eps, self.alpha_M, self.quadrature_error_estimate]


def alpha_M(h: float, xi: float, eps: float, tol: float = 1e-9) -> MelnikovResult:
    """Leading-order alpha at which the closed orbit of energy h persists."""
    if not (0 < h < 1):
        raise DomainError("h must lie in (0, 1)")
    if not eps > 0:
        raise DomainError("eps must be positive")
    da, ea = delta_alpha_with_error(h, xi, tol)
    de, ee = delta_eps_with_error(h, xi, tol)
    return MelnikovResult(h=h, xi=xi, eps=eps, delta_alpha=da, delta_eps=de,
                          alpha_M=xi - eps * de / da, quadrature_error_estimate=ea + ee)


def melnikov_table(hs, xi: float, eps: float, tol: float = 1e-9):
    return [alpha_M(float(h), xi, eps, tol) for h in hs]


def write_melnikov_csv(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["h", "delta_alpha", "delta_eps", "alpha_M", "err"])
        for r in results:
            w.writerow([repr(float(v)) for v in r.row()])
