"""Hamiltonian structure of the reduced problem at alpha = xi.

At alpha = xi the reduced field factors as ``g J grad H`` with

    H(y, z) = 1 - e^{-xi y} (xi y - xi z + xi + 1 - xi e^{-z}),
    g(y, z) = e^{xi y + z} / xi,

so orbits are level sets of H.  Levels h in (0, 1) are closed orbits around
the origin, h = 1 is the separatrix and h > 1 are unbounded.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import AccuracyError, DomainError
from .model import reduced_field, reduced_rhs, safe_exp
from .odecore import EventSpec, IntegratorConfig, integrate

J_SYMPLECTIC = np.array([[0.0, 1.0], [-1.0, 0.0]])


def hamiltonian(y, z, xi: float):
    """H(y, z) for the alpha = xi reduced flow."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    val = 1.0 - safe_exp(-xi * y) * (xi * y - xi * z + xi + 1.0 - xi * safe_exp(-z))
    return float(val) if np.ndim(val) == 0 else val


def grad_hamiltonian(y, z, xi: float):
    """Analytic gradient (dH/dy, dH/dz)."""
    e = safe_exp(-xi * np.asarray(y, dtype=float))
    emz = safe_exp(-np.asarray(z, dtype=float))
    dy = xi * xi * e * (y - z + 1.0 - emz)
    dz = -xi * e * np.expm1(-np.asarray(z, dtype=float))
    return np.array([dy, dz])


def g_factor(y, z, xi: float):
    """Positive factor g(y, z) = e^{xi y + z} / xi."""
    val = safe_exp(xi * np.asarray(y, dtype=float) + np.asarray(z, dtype=float)) / xi
    return val


# names used elsewhere in the documentation
H_eval = hamiltonian
g_eval = g_factor


def factorization_residual(y, z, xi: float, relative: bool = False) -> float:
    """|| f0(y, z; xi) - g J grad H || (optionally divided by ||f0||)."""
    f0 = reduced_rhs(np.array([y, z], dtype=float), xi, xi)
    rhs = g_factor(y, z, xi) * (J_SYMPLECTIC @ grad_hamiltonian(y, z, xi))
    res = float(np.linalg.norm(f0 - rhs))
    if relative:
        scale = float(np.linalg.norm(f0))
        return res / scale if scale > 0 else res
    return res


def axis_energy(y, xi: float):
    """H on the y-axis: 1 - e^{-xi y}(xi y + 1)."""
    y = np.asarray(y, dtype=float)
    val = -np.expm1(-xi * y) - xi * y * safe_exp(-xi * y)
    return float(val) if np.ndim(val) == 0 else val


@dataclass(frozen=True)
class LambertRoots:
    """Roots of 1 - e^{-xi y}(xi y + 1) = h: the y-axis crossings of the level set."""

    h: float
    xi: float
    y_lower: float
    y_upper: Optional[float] = None

    def residuals(self):
        out = [abs(axis_energy(self.y_lower, self.xi) - self.h)]
        if self.y_upper is not None:
            out.append(abs(axis_energy(self.y_upper, self.xi) - self.h))
        return out


def _polish(y, h, xi, iters=3):
    # Newton on the axis energy; derivative xi^2 y e^{-xi y}
    for _ in range(iters):
        d = xi * xi * y * math.exp(-xi * y)
        if d == 0:
            break
        step = (axis_energy(y, xi) - h) / d
        if not math.isfinite(step) or abs(step) > 1e-6 * max(1.0, abs(y)):
            break
        y -= step
    return y


def lambert_roots(h: float, xi: float) -> LambertRoots:
    """Both y-axis crossings of the level set H = h.

    The lower root (y < 0) exists for every h > 0; the upper root (y > 0) only
    for h < 1.  At h = 1 the lower root is exactly -1/xi.
    """
    if not (h > 0 and math.isfinite(h)):
        raise DomainError("h must be positive and finite")
    if xi <= 0:
        raise DomainError("xi must be positive")

    def F(y):
        return axis_energy(y, xi) - h

    if h == 1.0:
        lower = -1.0 / xi
    else:
        a = -41.0 / xi
        while F(a) < 0:
            a *= 2.0
            if a < -700.0 / xi:
                raise DomainError("h too large for the lower root to be representable")
        b = 0.0
        lower = brentq(F, a, b, xtol=1e-300, rtol=1e-15, maxiter=500)
        lower = _polish(lower, h, xi)
    upper = None
    if h < 1.0:
        b = 1.0 / xi
        while F(b) < 0:
            b *= 2.0
        upper = brentq(F, 0.0, b, xtol=1e-300, rtol=1e-15, maxiter=500)
        upper = _polish(upper, h, xi)
    return LambertRoots(h=h, xi=xi, y_lower=lower, y_upper=upper)


def h_from_yD(y: float, xi: float) -> float:
    """Energy of the closed orbit crossing the positive y-axis at y."""
    if not y > 0:
        raise DomainError("y must be positive")
    return axis_energy(y, xi)


def yD_from_h(h: float, xi: float) -> float:
    """Positive y-axis crossing of the closed orbit with energy h in (0, 1)."""
    if not 0 < h < 1:
        raise DomainError("h must lie in (0, 1)")
    return lambert_roots(h, xi).y_upper


h_from_yd = h_from_yD
yd_from_h = yD_from_h


def _level_c(y, h, xi):
    # H = h  <=>  z + e^{-z} = c(y)
    return y + 1.0 + 1.0 / xi - (1.0 - h) * math.exp(xi * y) / xi


def level_set_z(y: float, h: float, xi: float):
    """Both z-values on the level H = h above a given y.

    Returns (z_upper, z_lower) with z_upper >= 0 >= z_lower, or None when
    the vertical line through y misses the level set.
    """
    c = _level_c(y, h, xi)
    if c < 1.0:
        return None
    if c == 1.0:
        return 0.0, 0.0

    def phi(zz):
        return zz + math.exp(-zz) - c

    hi = brentq(phi, 0.0, c, xtol=1e-300, rtol=1e-15, maxiter=500)
    lo = brentq(phi, -math.log(2.0 * c + 2.0), 0.0, xtol=1e-300, rtol=1e-15, maxiter=500)
    return hi, lo


@dataclass
class LevelSet:
    """A level set of H as an ordered polyline of (y, z) samples.

    For closed levels the polyline starts and ends at the positive y-axis
    crossing and ``period`` is the return time.  Unbounded levels store the
    two graphs over ``y_grid`` and list the polyline along the lower branch
    from ``y_max`` to the turning point and back out along the upper one.
    """

    h: float
    xi: float
    kind: str
    polyline: np.ndarray
    period: Optional[float] = None
    closure_gap: Optional[float] = None
    max_level_error: float = 0.0
    times: Optional[np.ndarray] = None
    y_grid: Optional[np.ndarray] = None
    z_upper: Optional[np.ndarray] = None
    z_lower: Optional[np.ndarray] = None
    trajectory: object = field(default=None, repr=False)

    def to_csv(self, path):
        np.savetxt(path, self.polyline, delimiter=",", header="y,z", comments="")

    def to_json(self):
        return json.dumps({
            "h": self.h, "xi": self.xi, "kind": self.kind, "period": self.period,
            "points": self.polyline.tolist(),
        })


def trace_closed_orbit(h: float, xi: float, rtol: float = 1e-11, method: str = "nonstiff"):
    """Integrate the alpha = xi reduced flow once around the level H = h < 1.

    Starts on the positive y-axis crossing and stops at the next downward
    crossing of z = 0.  Returns the Trajectory.
    """
    yD = yD_from_h(h, xi)
    f, jac = reduced_field(xi, xi)
    cfg = IntegratorConfig(method=method, rtol=rtol, atol=1e-13, guard_index=1)
    ev = EventSpec(lambda t, s: s[1], direction=-1, terminal=True, name="return")
    # generous upper bound on the period
    return integrate(f, jac, [yD, 0.0], (0.0, 1e6), cfg, [ev])


def orbit_period(h: float, xi: float, rtol: float = 1e-11) -> float:
    """Period of the closed orbit H = h (numeric; no closed form is known)."""
    return float(trace_closed_orbit(h, xi, rtol).t[-1])


def trace_level_set(h: float, xi: float, tol: float = 1e-8, y_max: Optional[float] = None,
                    n_points: int = 2000, rtol: float = 1e-11) -> LevelSet:
    """Trace the level set H = h.

    Closed levels (0 < h < 1) are traced by flowing the alpha = xi reduced
    field once around; the closure gap must not exceed ``tol``.  Levels h >= 1
    are returned as two graphs z_upper(y) >= z_lower(y) on
    [y_lower, y_max] (default y_max = 30/xi).
    """
    if not (h > 0 and math.isfinite(h)):
        raise DomainError("h must be positive and finite")
    roots = lambert_roots(h, xi)
    if h < 1.0:
        tr = trace_closed_orbit(h, xi, rtol)
        if not tr.events:
            raise AccuracyError("closed orbit did not return to the section")
        yD = roots.y_upper
        gap = float(np.hypot(tr.y[-1, 0] - yD, tr.y[-1, 1]))
        if gap > tol:
            raise AccuracyError(f"closure gap {gap:.3g} exceeds tol {tol:.3g}")
        # integrator nodes plus uniform dense-output samples
        ts = np.union1d(tr.t, np.linspace(0.0, tr.t[-1], n_points))
        pts = tr(ts)
        pts[-1] = pts[0]
        err = float(np.max(np.abs(hamiltonian(pts[:, 0], pts[:, 1], xi) - h)))
        return LevelSet(h=h, xi=xi, kind="closed", polyline=pts, period=float(tr.t[-1]),
                        closure_gap=gap, max_level_error=err, times=ts, trajectory=tr)
    if y_max is None:
        y_max = 30.0 / xi
    y0 = roots.y_lower
    # cluster samples near the turning point, where the graphs have a square-root profile
    s = np.linspace(0.0, 1.0, n_points)
    ys = y0 + (y_max - y0) * s**2
    zu = np.empty(n_points)
    zl = np.empty(n_points)
    for i, yy in enumerate(ys):
        r = level_set_z(yy, h, xi) if i else (0.0, 0.0)
        if r is None:
            r = (0.0, 0.0)
        zu[i], zl[i] = r
    poly = np.vstack([np.column_stack([ys[::-1], zl[::-1]]), np.column_stack([ys[1:], zu[1:]])])
    err = float(np.max(np.abs(hamiltonian(poly[:, 0], poly[:, 1], xi) - h)))
    return LevelSet(h=h, xi=xi, kind="unbounded", polyline=poly, max_level_error=err,
                    y_grid=ys, z_upper=zu, z_lower=zl)
