"""Model equations for the spring-block slider with rate-and-state friction.

State variables are ``(x, y, z)`` where ``x`` is the friction state, ``y`` the
block displacement and ``z = ln(v)`` the log slip velocity.  All vector fields
accept scalars or numpy arrays whose leading axis indexes the components, so
``slow_rhs(np.array([xs, ys, zs]), p)`` evaluates on a whole grid at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, RangeError

# exp() overflows a double slightly above 709.78
EXP_LIMIT = 709.0


def safe_exp(a):
    """exp(a) that raises RangeError instead of returning inf."""
    arr = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise RangeError("non-finite exponent")
    if np.any(arr > EXP_LIMIT):
        raise RangeError(f"exp overflow: exponent {float(np.max(arr)):.6g} > {EXP_LIMIT}")
    out = np.exp(arr)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PhysicalParams:
    """Dimensional parameters of the slider (SI units)."""

    mass: float
    stiffness: float
    slip_length: float
    a_f: float
    b_f: float
    v0: float

    def __post_init__(self):
        for name in ("mass", "stiffness", "slip_length", "a_f", "b_f", "v0"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be a positive finite number, got {v!r}")


@dataclass(frozen=True)
class Params:
    """Dimensionless parameters (epsilon, xi, alpha).

    epsilon = 0 is allowed for the reduced and layer problems only.
    """

    epsilon: float
    xi: float
    alpha: float

    def __post_init__(self):
        for name in ("epsilon", "xi", "alpha"):
            v = getattr(self, name)
            if not math.isfinite(float(v)):
                raise DomainError(f"{name} must be finite, got {v!r}")
        if self.xi <= 0:
            raise DomainError(f"xi must be positive, got {self.xi}")
        if self.epsilon < 0:
            raise DomainError(f"epsilon must be nonnegative, got {self.epsilon}")

    def require_full(self):
        """Raise unless epsilon > 0 (needed by the full 3D slow field)."""
        if not self.epsilon > 0:
            raise DomainError("full-system operations need epsilon > 0; use the reduced problem for epsilon = 0")
        return self

    def replace(self, **kw) -> "Params":
        d = {"epsilon": self.epsilon, "xi": self.xi, "alpha": self.alpha}
        d.update(kw)
        return Params(**d)

    def as_dict(self):
        return {"epsilon": self.epsilon, "xi": self.xi, "alpha": self.alpha}


def nondimensionalize(p: PhysicalParams) -> Params:
    """Map physical parameters to ``(epsilon, xi, alpha)``.

    epsilon = M v0^2 / (kappa L^2), xi = kappa L / a_f, alpha = (b_f - a_f) / b_f.
    """
    if not isinstance(p, PhysicalParams):
        raise DomainError("expected PhysicalParams")
    eps = p.mass * p.v0**2 / (p.stiffness * p.slip_length**2)
    xi = p.stiffness * p.slip_length / p.a_f
    alpha = (p.b_f - p.a_f) / p.b_f
    return Params(epsilon=eps, xi=xi, alpha=alpha)


def _split3(s):
    s = np.asarray(s, dtype=float)
    if s.shape[0] != 3:
        raise DomainError(f"expected 3 components, got shape {s.shape}")
    return s[0], s[1], s[2]


def _split2(s):
    s = np.asarray(s, dtype=float)
    if s.shape[0] != 2:
        raise DomainError(f"expected 2 components, got shape {s.shape}")
    return s[0], s[1]


def slow_rhs(s, p: Params):
    """Full system in slow time.

    (x', y', z') = (-e^z (x + (1+alpha) z), e^z - 1, -e^{-z} (y + (x+z)/xi) / eps)
    """
    p.require_full()
    x, y, z = _split3(s)
    ez = safe_exp(z)
    emz = safe_exp(-z)
    return np.array([
        -ez * (x + (1.0 + p.alpha) * z),
        np.expm1(z),
        -emz * (y + (x + z) / p.xi) / p.epsilon,
    ])


def fast_rhs(s, p: Params):
    """Full system in fast time tau = t / eps; eps = 0 gives the layer problem."""
    x, y, z = _split3(s)
    ez = safe_exp(z)
    emz = safe_exp(-z)
    eps = p.epsilon
    return np.array([
        -eps * ez * (x + (1.0 + p.alpha) * z),
        eps * np.expm1(z),
        -emz * (y + (x + z) / p.xi),
    ])


def reduced_rhs(s, xi: float, alpha: float):
    """Reduced problem on the critical manifold in coordinates (y, z)."""
    y, z = _split2(s)
    ez = safe_exp(z)
    return np.array([np.expm1(z), xi + ez * (alpha * z - xi * y - xi)])


def layer_rhs(z, x0: float, y0: float, xi: float):
    """Fast fibre dynamics with (x, y) frozen at (x0, y0)."""
    return -safe_exp(-np.asarray(z, dtype=float)) * (y0 + (x0 + np.asarray(z, dtype=float)) / xi)


def layer_rhs_dz(z, x0: float, y0: float, xi: float):
    """Derivative of :func:`layer_rhs` with respect to z."""
    z = np.asarray(z, dtype=float)
    return safe_exp(-z) * (y0 + (x0 + z) / xi - 1.0 / xi)


def critical_manifold_z(x, y, xi: float):
    """z on the critical manifold: z = -x - xi y."""
    return -np.asarray(x, dtype=float) - xi * np.asarray(y, dtype=float) + 0.0


def linfinity_nullcline_x(z, alpha: float):
    """x-nullcline family x = -(1+alpha) z."""
    return -(1.0 + alpha) * np.asarray(z, dtype=float) + 0.0


def jacobian_reduced(s, xi: float, alpha: float):
    """Analytic Jacobian of :func:`reduced_rhs`."""
    y, z = _split2(s)
    ez = safe_exp(z)
    return np.array([
        [0.0, ez],
        [-xi * ez, ez * (alpha * z - xi * y - xi + alpha)],
    ])


def jacobian_slow(s, p: Params):
    """Analytic Jacobian of :func:`slow_rhs` (3x3)."""
    p.require_full()
    x, y, z = (float(c) for c in _split3(s))
    ez = safe_exp(z)
    emz = safe_exp(-z)
    a, xi, eps = p.alpha, p.xi, p.epsilon
    return np.array([
        [-ez, 0.0, -ez * (x + (1.0 + a) * z + 1.0 + a)],
        [0.0, 0.0, ez],
        [-emz / (xi * eps), -emz / eps, emz * (y + (x + z) / xi - 1.0 / xi) / eps],
    ])


def jacobian_fast(s, p: Params):
    """Analytic Jacobian of :func:`fast_rhs` (3x3)."""
    x, y, z = (float(c) for c in _split3(s))
    ez = safe_exp(z)
    emz = safe_exp(-z)
    a, xi, eps = p.alpha, p.xi, p.epsilon
    return np.array([
        [-eps * ez, 0.0, -eps * ez * (x + (1.0 + a) * z + 1.0 + a)],
        [0.0, 0.0, eps * ez],
        [-emz / xi, -emz, emz * (y + (x + z) / xi - 1.0 / xi)],
    ])


def trace_slow(s, p: Params) -> float:
    """Trace of the slow-time Jacobian (used for Abel-Liouville checks)."""
    x, y, z = (float(c) for c in _split3(s))
    ez = safe_exp(z)
    emz = safe_exp(-z)
    return -ez + emz * (y + (x + z) / p.xi - 1.0 / p.xi) / p.epsilon


def defect(s, xi: float):
    """Signed distance-like coordinate z + xi y + x from the critical manifold."""
    x, y, z = _split3(s)
    return z + xi * y + x


def project_to_reduced(s, xi: float, mode: str = "drop_x"):
    """Project a 3D state (or an array of states, components first) to (y, z).

    mode "drop_x" keeps (y, z) as is; mode "critical" replaces z by the
    critical-manifold value -x - xi y.
    """
    x, y, z = _split3(s)
    if mode == "drop_x":
        return np.array([y, z])
    if mode == "critical":
        return np.array([y, critical_manifold_z(x, y, xi)])
    raise DomainError(f"unknown projection mode {mode!r}")


def lift_to_critical(s, xi: float):
    """Lift (y, z) to the point (x, y, z) of the critical manifold."""
    y, z = _split2(s)
    return np.array([-xi * y - z, y, z])


def _exp(a: float) -> float:
    if not a <= EXP_LIMIT:
        raise RangeError(f"exp overflow: exponent {a!r}")
    return math.exp(a)


def slow_field(p: Params):
    """Return ``(f(t, s), jac(t, s))`` closures of the slow system for integrators.

    Scalar arithmetic only; equal to :func:`slow_rhs` / :func:`jacobian_slow`.
    """
    p.require_full()
    a1 = 1.0 + p.alpha
    xi, eps = p.xi, p.epsilon

    def f(t, s):
        x, y, z = s
        ez = _exp(z)
        emz = _exp(-z)
        return np.array([-ez * (x + a1 * z), math.expm1(z), -emz * (y + (x + z) / xi) / eps])

    def jac(t, s):
        x, y, z = s
        ez = _exp(z)
        emz = _exp(-z)
        return np.array([
            [-ez, 0.0, -ez * (x + a1 * z + a1)],
            [0.0, 0.0, ez],
            [-emz / (xi * eps), -emz / eps, emz * (y + (x + z - 1.0) / xi) / eps],
        ])

    return f, jac


def reduced_field(xi: float, alpha: float, sign: float = 1.0):
    """``(f, jac)`` closures of the reduced problem; ``sign=-1`` reverses time."""

    def f(t, s):
        y, z = s
        ez = _exp(z)
        return sign * np.array([math.expm1(z), xi + ez * (alpha * z - xi * y - xi)])

    def jac(t, s):
        y, z = s
        ez = _exp(z)
        return sign * np.array([[0.0, ez], [-xi * ez, ez * (alpha * z - xi * y - xi + alpha)]])

    return f, jac
