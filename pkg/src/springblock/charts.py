"""Compactification atlas: Poincare-sphere charts, blow-ups and fixed points at infinity.

Every chart carries a de-singularised vector field and a positive time factor
``F`` with ``d(chart time) = F dt`` where ``t`` is the slow time of the
original system.  Fields are evaluated with exact exponentials; the
``approximate`` switch of the q-augmented chart reproduces the simplification
``1 - exp(-1/w) ~ 1``.

Coordinate orders
-----------------
R2 (y, z)              K2_2D (y2, z2)         K3_2D (w3, y3)         K1_2D (w1, z1)
KAP1 (omega1, r1)      KAP2 (zeta2, r2)       KAP3 (omega3, r3)      KAP3_EXP (rho, eta)
R3 (x, y, z)           K2_3D (x2, y2, z2)     K3_3D (x3, y3, w3)     K1_3D (x1, z1, w1)
K3Q (w, x, y, q, eps)  QEPS_K1 (w, x, y, r1, eps1)                   QEPS_K2 (w, x, y, q2, r2)
HATK1 (r, x, y, q)     HATK1_RHO_SIGMA (sigma, y, rho)
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, RangeError
from .model import EXP_LIMIT, Params


class ChartId(str, Enum):
    R2 = "R2"
    K2_2D = "K2_2D"
    K3_2D = "K3_2D"
    K1_2D = "K1_2D"
    KAP1 = "KAP1"
    KAP2 = "KAP2"
    KAP3 = "KAP3"
    KAP3_EXP = "KAP3_EXP"
    R3 = "R3"
    K2_3D = "K2_3D"
    K3_3D = "K3_3D"
    K1_3D = "K1_3D"
    K3Q = "K3Q"
    QEPS_K1 = "QEPS_K1"
    QEPS_K2 = "QEPS_K2"
    HATK1 = "HATK1"
    HATK1_RHO_SIGMA = "HATK1_RHO_SIGMA"


@dataclass(frozen=True)
class ChartInfo:
    coords: tuple
    nonneg: tuple
    needs_eps: bool
    description: str
    time_factor: str


C = ChartId
CHARTS = {
    C.R2: ChartInfo(("y", "z"), (), False, "reduced plane", "1"),
    C.K2_2D: ChartInfo(("y2", "z2"), (), False, "chart W=1 of the 2-sphere (the reduced plane)", "1"),
    C.K3_2D: ChartInfo(("w3", "y3"), (0,), False, "chart Z=1 of the 2-sphere", "exp(1/w3)"),
    C.K1_2D: ChartInfo(("w1", "z1"), (0,), False, "chart Y=1 of the 2-sphere", "1"),
    C.KAP1: ChartInfo(("omega1", "r1"), (0, 1), False, "blow-up w1=r1*omega1, z1=r1", "exp(1/omega1)/r1"),
    C.KAP2: ChartInfo(("zeta2", "r2"), (1,), False, "blow-up w1=r2, z1=r2*zeta2", "exp(zeta2)/r2"),
    C.KAP3: ChartInfo(("omega3", "r3"), (0, 1), False, "blow-up w1=r3*omega3, z1=-r3", "omega3"),
    C.KAP3_EXP: ChartInfo(("rho", "eta"), (0, 1), False,
                          "exponential blow-up omega3=rho, r3=exp(-1/rho)*eta/rho", "1/eta"),
    C.R3: ChartInfo(("x", "y", "z"), (), True, "full space, slow time", "1"),
    C.K2_3D: ChartInfo(("x2", "y2", "z2"), (), False, "full space, fast time (chart W=1 of the 3-sphere)", "1/eps"),
    C.K3_3D: ChartInfo(("x3", "y3", "w3"), (2,), True, "chart Z=1 of the 3-sphere", "exp(1/w3)/eps"),
    C.K1_3D: ChartInfo(("x1", "z1", "w1"), (2,), True, "chart Y=1 of the 3-sphere", "exp(z1/w1)/eps"),
    C.K3Q: ChartInfo(("w", "x", "y", "q", "eps"), (0, 3, 4), False,
                     "chart Z=1 augmented with q=exp(-2/w) and eps as a variable", "exp(1/w)/(eps*w)"),
    C.QEPS_K1: ChartInfo(("w", "x", "y", "r1", "eps1"), (0, 3, 4), False,
                         "blow-up q=r1, eps=r1*eps1", "exp(1/w)/(eps1*w)"),
    C.QEPS_K2: ChartInfo(("w", "x", "y", "q2", "r2"), (0, 3, 4), False,
                         "blow-up q=r2*q2, eps=r2", "exp(1/w)/w"),
    C.HATK1: ChartInfo(("r", "x", "y", "q"), (0, 3), True, "blow-up w=r, q2=r*q", "exp(1/r)"),
    C.HATK1_RHO_SIGMA: ChartInfo(("sigma", "y", "rho"), (0, 2), True,
                                 "centre manifold x=-1-alpha of HATK1 with r=rho*sigma, q=rho",
                                 "rho*exp(1/(rho*sigma))"),
}


def chart_dim(chart) -> int:
    return len(CHARTS[ChartId(chart)].coords)


@dataclass(frozen=True)
class ChartPoint:
    chart: ChartId
    coords: tuple

    def __post_init__(self):
        ch = ChartId(self.chart)
        object.__setattr__(self, "chart", ch)
        c = tuple(float(v) for v in self.coords)
        object.__setattr__(self, "coords", c)
        info = CHARTS[ch]
        if len(c) != len(info.coords):
            raise DomainError(f"{ch.value} needs {len(info.coords)} coordinates, got {len(c)}")
        if not all(math.isfinite(v) for v in c):
            raise DomainError("coordinates must be finite")
        for i in info.nonneg:
            if c[i] < 0:
                raise DomainError(f"{ch.value}: {info.coords[i]} must be nonnegative")

    @property
    def array(self):
        return np.array(self.coords)


# --- exponential helpers ----------------------------------------------------


def exp_neg_inv(w: float, k: float = 1.0) -> float:
    """exp(-k/w) for w >= 0, defined as 0 at w = 0."""
    if w < 0:
        raise DomainError("exp(-k/w) needs w >= 0")
    if w == 0:
        return 0.0
    return math.exp(-k / w)


def _exp(a: float) -> float:
    if not a <= EXP_LIMIT:
        raise RangeError(f"exp overflow: exponent {a!r}")
    return math.exp(a)


def exp_neg_ratio(z: float, w: float, k: float = 1.0) -> float:
    """exp(-k z / w) for w >= 0; at w = 0 it is 0 for z > 0 and undefined otherwise."""
    if w < 0:
        raise DomainError("exp(-z/w) needs w >= 0")
    if w == 0:
        if z > 0:
            return 0.0
        raise DomainError("exp(-z/w) is undefined at w = 0 with z <= 0")
    return _exp(-k * z / w)


def _unpack(params):
    if isinstance(params, Params):
        return params.epsilon, params.xi, params.alpha
    if isinstance(params, dict):
        return params.get("epsilon"), params["xi"], params["alpha"]
    vals = tuple(params)
    if len(vals) == 2:
        return None, float(vals[0]), float(vals[1])
    if len(vals) == 3:
        return float(vals[0]), float(vals[1]), float(vals[2])
    raise DomainError("params must be Params, (xi, alpha) or (eps, xi, alpha)")


# --- chart vector fields ----------------------------------------------------


def _f_r2(c, eps, xi, a):
    y, z = c
    ez = _exp(z)
    return [math.expm1(z), xi + ez * (a * z - xi * y - xi)]


def _f_k3_2d(c, eps, xi, a):
    w, y = c
    om = -math.expm1(-1.0 / w) if w > 0 else 1.0  # 1 - exp(-1/w)
    return [-w * (a - xi * y) + xi * w * w * om, -y * (a - xi * y) + w * (1.0 + xi * y) * om]


def _f_k1_2d(c, eps, xi, a):
    w, z = c
    if w == 0:
        if z >= 0:
            raise DomainError("K1_2D field undefined at w1 = 0 with z1 >= 0")
        e = 0.0
    else:
        e = _exp(z / w)
    return [w * w * (1.0 - e), w * (xi + z) * (1.0 - e) + e * (a * z - xi)]


def _f_kap1(c, eps, xi, a):
    om, r = c
    E1 = exp_neg_inv(om)
    one_m = 1.0 - E1
    return [om * (xi - a * r) + r * om * om * xi * one_m,
            -r * (xi - a * r) - r * r * om * (xi + r) * one_m]


def _f_kap2(c, eps, xi, a):
    zeta, r = c
    em = _exp(-zeta)
    return [-xi + a * r * zeta + r * xi * (em - 1.0), r**3 * (em - 1.0)]


def _f_kap3(c, eps, xi, a):
    om, r = c
    E = exp_neg_inv(om)
    one_m = 1.0 - E
    if om == 0:
        e_over_r = 0.0
        e_over_om = 0.0
    else:
        if r == 0:
            raise DomainError("KAP3 field singular at r3 = 0 with omega3 > 0")
        e_over_r = E / r
        e_over_om = E / om
    wdot = r * om * one_m + om * (xi - r) * one_m - e_over_r * (a * r + xi)
    rdot = -r * (xi - r) * one_m + e_over_om * (a * r + xi)
    return [wdot, rdot]


def _kap3_exp_B(rho):
    # exp(-1/rho)/rho with its limit 0 at rho = 0
    return 0.0 if rho == 0 else math.exp(-1.0 / rho) / rho


def _f_kap3_exp(c, eps, xi, a):
    rho, eta = c
    B = _kap3_exp_B(rho)
    E = exp_neg_inv(rho)
    one_m = 1.0 - E
    g = B * eta * eta * one_m + eta * (xi - B * eta) * one_m - (a * B * eta + xi)  # rho'/rho^2
    rhodot = rho * rho * g
    etadot = -eta * eta * rho * (xi - B * eta) * one_m + eta * rho * (a * B * eta + xi) - eta * (1.0 - rho) * g
    return [rhodot, etadot]


def _need_eps(eps):
    if eps is None:
        raise DomainError("this chart needs epsilon")
    return eps


def _f_r3(c, eps, xi, a):
    eps = _need_eps(eps)
    if eps <= 0:
        raise DomainError("R3 uses slow time and needs epsilon > 0")
    x, y, z = c
    ez = _exp(z)
    emz = _exp(-z)
    return [-ez * (x + (1.0 + a) * z), math.expm1(z), -emz * (y + (x + z) / xi) / eps]


def _f_k2_3d(c, eps, xi, a):
    eps = _need_eps(eps)
    x, y, z = c
    ez = _exp(z)
    emz = _exp(-z)
    return [-eps * ez * (x + (1.0 + a) * z), eps * math.expm1(z), -emz * (y + (x + z) / xi)]


def _f_k3_3d(c, eps, xi, a):
    eps = _need_eps(eps)
    x, y, w = c
    P = y + (x + 1.0) / xi
    q = exp_neg_inv(w, 2.0)
    om = 1.0 - exp_neg_inv(w)
    return [-eps * (x + 1.0 + a) + x * q * P, eps * w * om + y * q * P, w * q * P]


def _f_k1_3d(c, eps, xi, a):
    eps = _need_eps(eps)
    x, z, w = c
    if w == 0:
        if z <= 0:
            raise DomainError("K1_3D field undefined at w1 = 0 with z1 <= 0")
        e1, e2 = 0.0, 0.0
    else:
        e1 = _exp(-z / w)
        e2 = e1 * e1
    om = 1.0 - e1
    return [-eps * (x + (1.0 + a) * z) - eps * x * w * om,
            -e2 * (1.0 + (x + z) / xi) - eps * z * w * om,
            -eps * w * w * om]


def _f_k3q(c, eps_unused, xi, a, approximate=False):
    w, x, y, q, eps = c
    P = y + (x + 1.0) / xi
    om = 1.0 if approximate else 1.0 - exp_neg_inv(w)
    return [w * w * q * P, -eps * w * (x + 1.0 + a) + x * q * w * P,
            eps * w * w * om + y * q * w * P, 2.0 * q * q * P, 0.0]


def _f_qeps_k1(c, eps_unused, xi, a, approximate=False):
    w, x, y, r1, e1 = c
    P = y + (x + 1.0) / xi
    om = 1.0 if approximate else 1.0 - exp_neg_inv(w)
    return [w * w * P, -e1 * w * (x + 1.0 + a) + x * w * P,
            e1 * w * w * om + y * w * P, 2.0 * r1 * P, -2.0 * e1 * P]


def _f_qeps_k2(c, eps_unused, xi, a, approximate=False):
    w, x, y, q2, r2 = c
    P = y + (x + 1.0) / xi
    om = 1.0 if approximate else 1.0 - exp_neg_inv(w)
    return [w * w * q2 * P, -w * (x + 1.0 + a) + x * q2 * w * P,
            w * w * om + y * q2 * w * P, 2.0 * q2 * q2 * P, 0.0]


def _f_hatk1(c, eps_unused, xi, a, approximate=False):
    r, x, y, q = c
    P = y + (x + 1.0) / xi
    om = 1.0 if approximate else 1.0 - exp_neg_inv(r)
    return [r * r * q * P, -(x + 1.0 + a) + x * r * q * P, r * om + y * r * q * P, q * q * (2.0 - r) * P]


def _f_rho_sigma(c, eps_unused, xi, a, approximate=False):
    s, y, rho = c
    P = y - a / xi
    om = 1.0 if approximate else 1.0 - exp_neg_inv(rho * s)
    return [s * (2.0 * rho * s - 2.0) * P, s * om + y * rho * s * P, rho * (2.0 - rho * s) * P]


_FIELDS = {
    C.R2: _f_r2, C.K2_2D: _f_r2, C.K3_2D: _f_k3_2d, C.K1_2D: _f_k1_2d,
    C.KAP1: _f_kap1, C.KAP2: _f_kap2, C.KAP3: _f_kap3, C.KAP3_EXP: _f_kap3_exp,
    C.R3: _f_r3, C.K2_3D: _f_k2_3d, C.K3_3D: _f_k3_3d, C.K1_3D: _f_k1_3d,
    C.K3Q: _f_k3q, C.QEPS_K1: _f_qeps_k1, C.QEPS_K2: _f_qeps_k2, C.HATK1: _f_hatk1,
    C.HATK1_RHO_SIGMA: _f_rho_sigma,
}
_APPROX = {C.K3Q, C.QEPS_K1, C.QEPS_K2, C.HATK1, C.HATK1_RHO_SIGMA}


def _as_point(p, chart=None):
    if isinstance(p, ChartPoint):
        return p
    return ChartPoint(ChartId(chart), tuple(p))


def chart_rhs(p, params, chart=None, approximate: bool = False) -> np.ndarray:
    """De-singularised vector field of ``p.chart`` at ``p``.

    ``p`` is a ChartPoint, or a coordinate sequence together with ``chart``.
    ``params`` is a Params, ``(xi, alpha)`` or ``(eps, xi, alpha)``.
    """
    pt = _as_point(p, chart)
    eps, xi, a = _unpack(params)
    f = _FIELDS[pt.chart]
    if pt.chart in _APPROX:
        return np.array(f(pt.coords, eps, xi, a, approximate), dtype=float)
    if approximate:
        raise DomainError(f"{pt.chart.value} has no approximate form")
    return np.array(f(pt.coords, eps, xi, a), dtype=float)


def chart_field(chart, params, approximate: bool = False):
    """``f(t, s)`` closure of a chart field for the integrators (no domain re-checks)."""
    ch = ChartId(chart)
    eps, xi, a = _unpack(params)
    f = _FIELDS[ch]
    info = CHARTS[ch]
    if info.needs_eps:
        _need_eps(eps)
    if ch in _APPROX:
        return lambda t, s: np.array(f(s, eps, xi, a, approximate))
    return lambda t, s: np.array(f(s, eps, xi, a))


def time_factor(p, params, chart=None) -> float:
    """Positive factor F with d(chart time) = F dt, t the slow time."""
    pt = _as_point(p, chart)
    eps, xi, a = _unpack(params)
    c = pt.coords
    ch = pt.chart

    def inv_exp(w):
        return math.inf if w == 0 else _exp(1.0 / w)

    if ch in (C.R2, C.K2_2D, C.K1_2D, C.R3):
        return 1.0
    if ch == C.K3_2D:
        return inv_exp(c[0])
    if ch == C.KAP1:
        return inv_exp(c[0]) / c[1] if c[1] > 0 else math.inf
    if ch == C.KAP2:
        return _exp(c[0]) / c[1] if c[1] > 0 else math.inf
    if ch == C.KAP3:
        return c[0]
    if ch == C.KAP3_EXP:
        return 1.0 / c[1] if c[1] > 0 else math.inf
    if ch == C.K2_3D:
        return 1.0 / _need_eps(eps)
    if ch == C.K3_3D:
        return inv_exp(c[2]) / _need_eps(eps)
    if ch == C.K1_3D:
        return (_exp(c[1] / c[2]) if c[2] > 0 else math.inf) / _need_eps(eps)
    if ch == C.K3Q:
        return inv_exp(c[0]) / (c[4] * c[0]) if c[0] > 0 and c[4] > 0 else math.inf
    if ch == C.QEPS_K1:
        return inv_exp(c[0]) / (c[4] * c[0]) if c[0] > 0 and c[4] > 0 else math.inf
    if ch == C.QEPS_K2:
        return inv_exp(c[0]) / c[0] if c[0] > 0 else math.inf
    if ch == C.HATK1:
        return inv_exp(c[0])
    if ch == C.HATK1_RHO_SIGMA:
        rs = c[0] * c[2]
        return c[2] * inv_exp(rs) if rs > 0 else math.inf
    raise DomainError(f"no time factor for {ch}")


def q_slaving_drift(states) -> float:
    """Largest relative deviation of q from exp(-2/w) along K3Q samples (rows w, x, y, q, eps).

    q = exp(-2/w) is invariant under the K3Q field; drift beyond about 1e-6
    signals an inaccurate integration.
    """
    s = np.atleast_2d(np.asarray(states, dtype=float))
    w, q = s[:, 0], s[:, 3]
    if np.any(w <= 0):
        raise DomainError("q slaving is checked for w > 0 only")
    ref = np.exp(-2.0 / w)
    return float(np.max(np.abs(q - ref) / ref))


def chart_jacobian(p, params, chart=None, h: float = 1e-6, approximate: bool = False) -> np.ndarray:
    """Finite-difference Jacobian of :func:`chart_rhs`.

    Coordinates constrained to be nonnegative and sitting within ``2h`` of 0
    use the one-sided second-order stencil so the boundary is never crossed.
    """
    pt = _as_point(p, chart)
    info = CHARTS[pt.chart]
    x0 = np.array(pt.coords)
    n = x0.size
    J = np.empty((n, n))

    def f(x):
        return chart_rhs(ChartPoint(pt.chart, tuple(x)), params, approximate=approximate)

    for j in range(n):
        d = h * max(1.0, abs(x0[j]))
        if j in info.nonneg and x0[j] < 2 * d:
            x1 = x0.copy()
            x2 = x0.copy()
            x1[j] += d
            x2[j] += 2 * d
            J[:, j] = (-3.0 * f(x0) + 4.0 * f(x1) - f(x2)) / (2 * d)
        else:
            xp = x0.copy()
            xm = x0.copy()
            xp[j] += d
            xm[j] -= d
            J[:, j] = (f(xp) - f(xm)) / (2 * d)
    return J


# --- transitions --------------------------------------------------------------


def _pos(v, what):
    if not v > 0:
        raise DomainError(f"transition needs {what} > 0")
    return v


def _eps_of(params):
    if params is None:
        raise DomainError("this transition needs epsilon")
    eps, _, _ = _unpack(params)
    if eps is None or not eps > 0:
        raise DomainError("this transition needs epsilon > 0")
    return eps


def _alpha_of(params):
    if params is None:
        raise DomainError("this transition needs alpha")
    return _unpack(params)[2]


def _k23(c, pr):
    y, z = c
    _pos(z, "z2")
    return (1.0 / z, y / z)


def _k32(c, pr):
    w, y = c
    _pos(w, "w3")
    return (y / w, 1.0 / w)


def _k21(c, pr):
    y, z = c
    _pos(y, "y2")
    return (1.0 / y, z / y)


def _k12(c, pr):
    w, z = c
    _pos(w, "w1")
    return (1.0 / w, z / w)


def _k31(c, pr):
    w, y = c
    _pos(y, "y3")
    return (w / y, 1.0 / y)


def _k13(c, pr):
    w, z = c
    _pos(z, "z1")
    return (w / z, 1.0 / z)


def _kap1_to_k1(c, pr):
    om, r = c
    _pos(r, "r1")
    return (r * om, r)


def _k1_to_kap1(c, pr):
    w, z = c
    _pos(z, "z1")
    return (w / z, z)


def _kap2_to_k1(c, pr):
    zeta, r = c
    _pos(r, "r2")
    return (r, r * zeta)


def _k1_to_kap2(c, pr):
    w, z = c
    _pos(w, "w1")
    return (z / w, w)


def _kap3_to_k1(c, pr):
    om, r = c
    _pos(r, "r3")
    return (r * om, -r)


def _k1_to_kap3(c, pr):
    w, z = c
    if not z < 0:
        raise DomainError("transition needs z1 < 0")
    return (-w / z, -z)


def _kap1_to_kap2(c, pr):
    om, r = c
    _pos(om, "omega1")
    _pos(r, "r1")
    return (1.0 / om, r * om)


def _kap2_to_kap1(c, pr):
    zeta, r = c
    _pos(zeta, "zeta2")
    _pos(r, "r2")
    return (1.0 / zeta, r * zeta)


def _kap2_to_kap3(c, pr):
    zeta, r = c
    if not zeta < 0:
        raise DomainError("transition needs zeta2 < 0")
    _pos(r, "r2")
    return (-1.0 / zeta, -r * zeta)


def _kap3_to_kap2(c, pr):
    om, r = c
    _pos(om, "omega3")
    _pos(r, "r3")
    return (-1.0 / om, r * om)


def _exp_to_kap3(c, pr):
    rho, eta = c
    _pos(rho, "rho")
    _pos(eta, "eta")
    return (rho, math.exp(-1.0 / rho) * eta / rho)


def _kap3_to_exp(c, pr):
    om, r = c
    _pos(om, "omega3")
    _pos(r, "r3")
    return (om, r * om * _exp(1.0 / om))


def _K23(c, pr):
    x, y, z = c
    _pos(z, "z2")
    return (x / z, y / z, 1.0 / z)


def _K32(c, pr):
    x, y, w = c
    _pos(w, "w3")
    return (x / w, y / w, 1.0 / w)


def _K21(c, pr):
    x, y, z = c
    _pos(y, "y2")
    return (x / y, z / y, 1.0 / y)


def _K12(c, pr):
    x, z, w = c
    _pos(w, "w1")
    return (x / w, 1.0 / w, z / w)


def _K31(c, pr):
    x, y, w = c
    _pos(y, "y3")
    return (x / y, 1.0 / y, w / y)


def _K13(c, pr):
    x, z, w = c
    _pos(z, "z1")
    return (x / z, 1.0 / z, w / z)


def _k3_to_k3q(c, pr):
    x, y, w = c
    _pos(w, "w3")
    return (w, x, y, math.exp(-2.0 / w), _eps_of(pr))


def _k3q_to_k3(c, pr):
    w, x, y, q, eps = c
    _pos(w, "w")
    return (x, y, w)


def _k3q_to_qk1(c, pr):
    w, x, y, q, eps = c
    _pos(q, "q")
    return (w, x, y, q, eps / q)


def _qk1_to_k3q(c, pr):
    w, x, y, r1, e1 = c
    return (w, x, y, r1, r1 * e1)


def _k3q_to_qk2(c, pr):
    w, x, y, q, eps = c
    _pos(eps, "eps")
    return (w, x, y, q / eps, eps)


def _qk2_to_k3q(c, pr):
    w, x, y, q2, r2 = c
    return (w, x, y, r2 * q2, r2)


def _qk1_to_qk2(c, pr):
    w, x, y, r1, e1 = c
    _pos(e1, "eps1")
    return (w, x, y, 1.0 / e1, r1 * e1)


def _qk2_to_qk1(c, pr):
    w, x, y, q2, r2 = c
    _pos(q2, "q2")
    return (w, x, y, r2 * q2, 1.0 / q2)


def _qk2_to_hat(c, pr):
    w, x, y, q2, r2 = c
    _pos(w, "w")
    return (w, x, y, q2 / w)


def _hat_to_qk2(c, pr):
    r, x, y, q = c
    return (r, x, y, r * q, _eps_of(pr))


def _hat_to_rs(c, pr):
    r, x, y, q = c
    _pos(q, "q")
    return (r / q, y, q)


def _rs_to_hat(c, pr):
    s, y, rho = c
    return (rho * s, -1.0 - _alpha_of(pr), y, rho)


def _identity(c, pr):
    return tuple(c)


TRANSITIONS = {
    (C.R2, C.K2_2D): _identity, (C.K2_2D, C.R2): _identity,
    (C.K2_2D, C.K3_2D): _k23, (C.K3_2D, C.K2_2D): _k32,
    (C.K2_2D, C.K1_2D): _k21, (C.K1_2D, C.K2_2D): _k12,
    (C.K3_2D, C.K1_2D): _k31, (C.K1_2D, C.K3_2D): _k13,
    (C.KAP1, C.K1_2D): _kap1_to_k1, (C.K1_2D, C.KAP1): _k1_to_kap1,
    (C.KAP2, C.K1_2D): _kap2_to_k1, (C.K1_2D, C.KAP2): _k1_to_kap2,
    (C.KAP3, C.K1_2D): _kap3_to_k1, (C.K1_2D, C.KAP3): _k1_to_kap3,
    (C.KAP1, C.KAP2): _kap1_to_kap2, (C.KAP2, C.KAP1): _kap2_to_kap1,
    (C.KAP2, C.KAP3): _kap2_to_kap3, (C.KAP3, C.KAP2): _kap3_to_kap2,
    (C.KAP3_EXP, C.KAP3): _exp_to_kap3, (C.KAP3, C.KAP3_EXP): _kap3_to_exp,
    (C.R3, C.K2_3D): _identity, (C.K2_3D, C.R3): _identity,
    (C.K2_3D, C.K3_3D): _K23, (C.K3_3D, C.K2_3D): _K32,
    (C.K2_3D, C.K1_3D): _K21, (C.K1_3D, C.K2_3D): _K12,
    (C.K3_3D, C.K1_3D): _K31, (C.K1_3D, C.K3_3D): _K13,
    (C.K3_3D, C.K3Q): _k3_to_k3q, (C.K3Q, C.K3_3D): _k3q_to_k3,
    (C.K3Q, C.QEPS_K1): _k3q_to_qk1, (C.QEPS_K1, C.K3Q): _qk1_to_k3q,
    (C.K3Q, C.QEPS_K2): _k3q_to_qk2, (C.QEPS_K2, C.K3Q): _qk2_to_k3q,
    (C.QEPS_K1, C.QEPS_K2): _qk1_to_qk2, (C.QEPS_K2, C.QEPS_K1): _qk2_to_qk1,
    (C.QEPS_K2, C.HATK1): _qk2_to_hat, (C.HATK1, C.QEPS_K2): _hat_to_qk2,
    (C.HATK1, C.HATK1_RHO_SIGMA): _hat_to_rs, (C.HATK1_RHO_SIGMA, C.HATK1): _rs_to_hat,
}

# maps that forget a coordinate; round trips through them are not identities
LOSSY = {(C.HATK1, C.HATK1_RHO_SIGMA), (C.K3Q, C.K3_3D), (C.QEPS_K2, C.HATK1)}


def transition_path(source, target):
    """Shortest chain of charts from source to target (breadth-first search)."""
    source, target = ChartId(source), ChartId(target)
    if source == target:
        return [source]
    prev = {source: None}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for (a, b) in TRANSITIONS:
            if a == u and b not in prev:
                prev[b] = u
                if b == target:
                    path = [b]
                    while prev[path[-1]] is not None:
                        path.append(prev[path[-1]])
                    return path[::-1]
                queue.append(b)
    raise DomainError(f"no transition path from {source.value} to {target.value}")


def transition(p, target, params=None, chart=None) -> ChartPoint:
    """Map a point to another chart, composing direct transitions if needed.

    Raises DomainError when the point lies outside an overlap domain.  Maps
    into the q-augmented charts need ``params`` for epsilon, and the lift
    from the rho-sigma chart needs alpha.
    """
    pt = _as_point(p, chart)
    path = transition_path(pt.chart, target)
    cur = pt
    for a, b in zip(path[:-1], path[1:]):
        coords = TRANSITIONS[(a, b)](cur.coords, params)
        cur = ChartPoint(b, coords)
    return cur


# --- sphere maps ---------------------------------------------------------------


def project_to_sphere(s) -> np.ndarray:
    """(x, y, z) -> (X, Y, Z, W) on the upper half of the unit 3-sphere."""
    s = np.asarray(s, dtype=float)
    v = np.concatenate([s, np.ones((1,) + s.shape[1:])], axis=0)
    return v / np.linalg.norm(v, axis=0)


def chart_to_sphere(p, chart=None) -> np.ndarray:
    """Sphere point of a 3D chart point (R3, K2_3D, K3_3D or K1_3D)."""
    pt = _as_point(p, chart)
    c = pt.coords
    if pt.chart in (C.R3, C.K2_3D):
        v = np.array([c[0], c[1], c[2], 1.0])
    elif pt.chart == C.K3_3D:
        v = np.array([c[0], c[1], 1.0, c[2]])
    elif pt.chart == C.K1_3D:
        v = np.array([c[0], 1.0, c[1], c[2]])
    else:
        raise DomainError(f"no sphere map for chart {pt.chart.value}")
    return v / np.linalg.norm(v)


def k3_to_sphere(x3, y3, w3):
    """Vectorised sphere map of chart K3_3D."""
    v = np.array([x3, y3, np.ones_like(np.asarray(x3, dtype=float)), w3], dtype=float)
    return (v / np.linalg.norm(v, axis=0)).T


def k1_to_sphere(x1, z1, w1):
    """Vectorised sphere map of chart K1_3D."""
    v = np.array([x1, np.ones_like(np.asarray(x1, dtype=float)), z1, w1], dtype=float)
    return (v / np.linalg.norm(v, axis=0)).T


def project_to_sphere_2d(s) -> np.ndarray:
    """(y, z) -> (Y, Z, W) on the upper half of the unit 2-sphere."""
    s = np.asarray(s, dtype=float)
    v = np.concatenate([s, np.ones((1,) + s.shape[1:])], axis=0)
    return v / np.linalg.norm(v, axis=0)


# --- fixed points at infinity ---------------------------------------------------


@dataclass(frozen=True)
class InfinityFixedPoint:
    name: str
    chart: ChartId
    coords: tuple
    eigenvalues: tuple
    structure: str
    sphere_chart: Optional[ChartId] = None
    sphere_coords: Optional[tuple] = None
    eps: Optional[float] = None

    def point(self) -> ChartPoint:
        return ChartPoint(self.chart, self.coords)

    def params(self, xi, alpha):
        return (self.eps, xi, alpha) if self.eps is not None else (1.0, xi, alpha)

    def as_dict(self):
        return {
            "name": self.name, "chart": self.chart.value, "coords": list(self.coords),
            "eigenvalues": list(self.eigenvalues), "structure": self.structure,
            "sphere_chart": self.sphere_chart.value if self.sphere_chart else None,
            "sphere_coords": list(self.sphere_coords) if self.sphere_coords else None,
        }


def fixed_points_at_infinity(xi: float, alpha: float) -> list:
    """Catalogue of the equilibria at infinity and on the blow-up spheres."""
    if xi <= 0:
        raise DomainError("xi must be positive")
    a = alpha
    r = a / xi
    return [
        InfinityFixedPoint("Q1", C.K3_2D, (0.0, 0.0), (-a, -a), "improper-node",
                           C.K3_3D, (-1.0, 0.0, 0.0)),
        InfinityFixedPoint("Q3", C.K3_2D, (0.0, r), (a, 0.0), "center-direction",
                           C.K3_3D, (-1.0 - a, r, 0.0)),
        InfinityFixedPoint("Q6", C.KAP3_EXP, (0.0, 1.0), (0.0, -xi), "center-direction",
                           C.K1_3D, (-xi, 0.0, 0.0)),
        InfinityFixedPoint("Q7", C.KAP3, (0.0, xi), (xi, xi), "star-node"),
        InfinityFixedPoint("O1", C.KAP1, (0.0, 0.0), (xi, -xi), "saddle"),
        InfinityFixedPoint("O3", C.KAP3_EXP, (0.0, 0.0), (0.0, xi), "center-direction"),
        InfinityFixedPoint("Q2", C.HATK1_RHO_SIGMA, (0.0, 0.0, 0.0), (2 * r, 0.0, -2 * r), "saddle",
                           C.K3_3D, (-1.0 - a, 0.0, 0.0)),
        InfinityFixedPoint("Q4", C.HATK1_RHO_SIGMA, (0.0, 2 * r, 0.0), (-2 * r, 0.0, 2 * r), "saddle",
                           C.K3_3D, (-1.0 - a, 2 * r, 0.0)),
        InfinityFixedPoint("Q5", C.K1_3D, (-(xi / (2 * a)) * (1 + a), (xi / (2 * a)) * (1 - a), 0.0),
                           (0.0, 0.0, 0.0), "non-hyperbolic",
                           C.K1_3D, (-(xi / (2 * a)) * (1 + a), (xi / (2 * a)) * (1 - a), 0.0), eps=0.0),
    ]


def fixed_point(name: str, xi: float, alpha: float) -> InfinityFixedPoint:
    for fp in fixed_points_at_infinity(xi, alpha):
        if fp.name == name:
            return fp
    raise DomainError(f"unknown fixed point {name!r}")


def heteroclinic_sigma(y, alpha: float, xi: float):
    """sigma = 2 (alpha/xi) y - y^2 on the sphere rho = 0."""
    y = np.asarray(y, dtype=float)
    return 2.0 * (alpha / xi) * y - y * y


def verify_heteroclinic_L0(alpha: float, xi: float, y: float) -> float:
    """Tangency defect of the closed-form heteroclinic in the rho = 0 field.

    Returns |sigma' - (d sigma/dy) y'| at (sigma(y), y, 0).
    """
    if not 0 < y < 2 * alpha / xi:
        raise DomainError("y must lie in (0, 2 alpha/xi)")
    s = float(heteroclinic_sigma(y, alpha, xi))
    f = chart_rhs(ChartPoint(C.HATK1_RHO_SIGMA, (s, y, 0.0)), (1.0, xi, alpha))
    slope = 2.0 * alpha / xi - 2.0 * y
    return float(abs(f[0] - slope * f[1]))


def atlas_json(xi: float, alpha: float) -> str:
    """Describe charts, transitions and fixed points as a JSON document."""
    doc = {
        "charts": {c.value: {"coords": list(i.coords), "nonnegative": [i.coords[k] for k in i.nonneg],
                             "needs_eps": i.needs_eps, "description": i.description,
                             "time_factor": i.time_factor} for c, i in CHARTS.items()},
        "transitions": [[a.value, b.value, (a, b) in LOSSY] for (a, b) in TRANSITIONS],
        "fixed_points": [fp.as_dict() for fp in fixed_points_at_infinity(xi, alpha)],
        "xi": xi, "alpha": alpha,
    }
    return json.dumps(doc, indent=2)
