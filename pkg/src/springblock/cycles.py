"""Singular cycle, limit cycles and the separatrix structure of the reduced flow.

The reduced flow is integrated across charts: the plane R2 for moderate z and
the chart K3_2D (w3 = 1/z, y3 = y/z) once z is large, where trajectories run
off to infinity in finite time.  Limit cycles of the full system are located
as fixed points of the return map to the section {z = 0, z' < 0}.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .charts import (
    ChartId,
    chart_field,
    chart_to_sphere,
    fixed_point,
    k1_to_sphere,
    k3_to_sphere,
    project_to_sphere,
)
from .errors import DomainError, GuardTripped, IntegrationError, SearchError, TraceError
from .hamiltonian import axis_energy, hamiltonian, lambert_roots
from .model import Params, reduced_field, slow_field
from .odecore import (
    EventSpec,
    IntegratorConfig,
    Trajectory,
    integrate,
    integrate_variational_full,
)

W_ENTER = 0.2  # switch R2 -> K3_2D when w3 = 1/z drops below this
W_LEAVE = 0.5  # switch K3_2D -> R2 when w3 rises above this


# --- reduced flow across charts ------------------------------------------------


@dataclass
class AtlasPiece:
    chart: ChartId
    traj: Trajectory


@dataclass
class AtlasTrajectory:
    """Reduced-flow trajectory stitched from R2 and K3_2D pieces.

    The last state component of every piece is the elapsed slow time.
    """

    pieces: list
    status: str
    direction: int = 1
    axis_crossings: list = field(default_factory=list)

    def reduced_points(self) -> np.ndarray:
        """All samples as (y, z)."""
        out = []
        for pc in self.pieces:
            if pc.chart == ChartId.R2:
                out.append(pc.traj.y[:, :2])
            else:
                w, y3 = pc.traj.y[:, 0], pc.traj.y[:, 1]
                out.append(np.column_stack([y3 / w, 1.0 / w]))
        return np.vstack(out)

    def chart_tags(self) -> list:
        return [pc.chart.value for pc in self.pieces for _ in range(len(pc.traj.t))]

    def times(self) -> np.ndarray:
        return np.concatenate([pc.traj.y[:, -1] for pc in self.pieces])

    @property
    def final_chart(self) -> ChartId:
        return self.pieces[-1].chart

    @property
    def final_state(self) -> np.ndarray:
        return self.pieces[-1].traj.final

    def sphere_points_on_critical_manifold(self, xi: float) -> np.ndarray:
        """Lift every sample to the critical manifold and map it to the 3-sphere."""
        out = []
        for pc in self.pieces:
            if pc.chart == ChartId.R2:
                y, z = pc.traj.y[:, 0], pc.traj.y[:, 1]
                out.append(project_to_sphere(np.array([-xi * y - z, y, z])).T)
            else:
                w, y3 = pc.traj.y[:, 0], pc.traj.y[:, 1]
                out.append(k3_to_sphere(-xi * y3 - 1.0, y3, w))
        return np.vstack(out)


def _reduced_r2_aug(xi, alpha, direction):
    f, jac = reduced_field(xi, alpha)

    def fa(t, s):
        v = f(t, s[:2])
        return np.array([direction * v[0], direction * v[1], direction])

    def ja(t, s):
        J = np.zeros((3, 3))
        J[:2, :2] = direction * jac(t, s[:2])
        return J

    return fa, ja


def _k3_aug(xi, alpha, direction):
    f = chart_field(ChartId.K3_2D, (xi, alpha))

    def fa(t, s):
        w = s[0]
        if w <= 0:
            # w3 = 0 is invariant (the circle at infinity); stay on it
            w = 0.0
        v = f(t, (w, s[1]))
        dt = math.exp(-1.0 / w) if w > 0 else 0.0
        return np.array([direction * v[0], direction * v[1], direction * dt])

    return fa


def integrate_reduced_atlas(alpha: float, xi: float, s0, chart=ChartId.R2, direction: int = 1,
                            span: float = 1e6, rtol: float = 1e-10, atol: float = 1e-12,
                            stop_axis: Optional[int] = None, axis_direction: int = 0,
                            w_final: Optional[float] = None, origin_radius: Optional[float] = None,
                            z_escape: Optional[float] = None, max_pieces: int = 40,
                            extra_k3_events: Sequence[EventSpec] = (), method: str = "stiff") -> AtlasTrajectory:
    """Integrate the reduced flow, switching between R2 and K3_2D.

    Parameters
    ----------
    s0 : (y, z) in R2 or (w3, y3) in K3_2D, according to ``chart``.
    direction : +1 forward, -1 backward in time.
    span : chart-time budget of each piece.
    stop_axis : stop at the n-th crossing of z = 0 (filtered by ``axis_direction``).
    w_final : stop in K3_2D once w3 falls to this value.
    origin_radius : stop in R2 once |(y, z)| falls below this value.
    z_escape : stop once z exceeds this value (in either chart).
    """
    chart = ChartId(chart)
    if chart not in (ChartId.R2, ChartId.K3_2D):
        raise DomainError("reduced atlas integration starts in R2 or K3_2D")
    state = np.array(list(s0) + [0.0], dtype=float)
    pieces = []
    crossings = []
    n_axis = 0
    cfg = IntegratorConfig(method=method, rtol=rtol, atol=atol, guard_index=None)
    status = "budget"
    for _ in range(max_pieces):
        if chart == ChartId.R2:
            fa, ja = _reduced_r2_aug(xi, alpha, direction)
            evs = [EventSpec(lambda t, s: s[1] - 1.0 / W_ENTER, direction=1, terminal=True, name="enter_k3"),
                   EventSpec(lambda t, s: s[1], direction=axis_direction, terminal=False, name="axis")]
            if origin_radius is not None:
                evs.append(EventSpec(lambda t, s: math.hypot(s[0], s[1]) - origin_radius, direction=-1,
                                     terminal=True, name="origin"))
            if z_escape is not None and z_escape < 1.0 / W_ENTER:
                evs.append(EventSpec(lambda t, s: s[1] - z_escape, direction=1, terminal=True, name="escape"))
            tr = _integrate_until_axis(fa, ja, state, span, cfg, evs, stop_axis, n_axis)
            pieces.append(AtlasPiece(chart, tr))
            for e in tr.events:
                if e.name == "axis":
                    n_axis += 1
                    crossings.append(e)
            last = tr.events[-1].name if tr.events else None
            if tr.status == "event" and last == "enter_k3":
                s = tr.final
                chart = ChartId.K3_2D
                state = np.array([1.0 / s[1], s[0] / s[1], s[2]])
                continue
            if tr.status == "event" and last in ("origin", "escape"):
                status = last
                break
            if tr.status == "event" and last == "axis":
                status = "axis"
                break
            status = "budget"
            break
        else:
            fa = _k3_aug(xi, alpha, direction)
            evs = [EventSpec(lambda t, s: s[0] - W_LEAVE, direction=1, terminal=True, name="leave_k3")]
            if w_final is not None:
                evs.append(EventSpec(lambda t, s: s[0] - w_final, direction=-1, terminal=True, name="q1"))
            if z_escape is not None and z_escape >= 1.0 / W_ENTER:
                evs.append(EventSpec(lambda t, s: s[0] - 1.0 / z_escape, direction=-1, terminal=True,
                                     name="escape"))
            evs.extend(extra_k3_events)
            cfg_k3 = cfg.replace(method="nonstiff")
            tr = integrate(fa, None, state, (0.0, span), cfg_k3, evs)
            pieces.append(AtlasPiece(chart, tr))
            last = tr.events[-1].name if tr.events else None
            if tr.status == "event" and last == "leave_k3":
                s = tr.final
                chart = ChartId.R2
                state = np.array([s[1] / s[0], 1.0 / s[0], s[2]])
                continue
            if tr.status == "event" and last in ("q1", "escape"):
                status = last
                break
            if tr.status == "event" and tr.events and events_terminal(evs, last):
                status = last
                break
            status = "budget"
            break
    return AtlasTrajectory(pieces, status, direction, crossings)


def events_terminal(evs, name):
    return any(e.name == name and e.terminal for e in evs)


def _integrate_until_axis(fa, ja, state, span, cfg, evs, stop_axis, n_axis):
    if stop_axis is None:
        return integrate(fa, ja, state, (0.0, span), cfg, evs)
    remaining = stop_axis - n_axis
    evs = list(evs)
    count = {"n": 0}
    # make the axis event terminal on its remaining-th occurrence by chaining integrations
    axis = evs[1]
    evs[1] = EventSpec(axis.fun, direction=axis.direction, terminal=True, name="axis")
    pieces_t, pieces_y, events = [], [], []
    cur = state
    t0 = 0.0
    tr = None
    while True:
        tr = integrate(fa, ja, cur, (t0, span), cfg, evs)
        pieces_t.append(tr.t if not pieces_t else tr.t[1:])
        pieces_y.append(tr.y if not pieces_y else tr.y[1:])
        events.extend(tr.events)
        last = tr.events[-1].name if tr.events else None
        if tr.status == "event" and last == "axis":
            count["n"] += 1
            if count["n"] >= remaining:
                break
            cur = tr.final.copy()
            cur[1] = 0.0  # restart exactly on the axis so the crossing is not found twice
            t0 = float(tr.t[-1])
            if t0 >= span:
                break
            continue
        break
    return Trajectory(np.concatenate(pieces_t), np.vstack(pieces_y), None, events,
                      diagnostics=tr.diagnostics, status=tr.status)


# --- separatrices ------------------------------------------------------------------


@dataclass
class SeparatrixTrace:
    kind: str
    alpha: float
    xi: float
    seed: tuple
    seed_chart: str
    polyline: np.ndarray
    charts: list
    t_physical: np.ndarray
    crossing_y: Optional[float]
    crossing_energy: Optional[float]
    atlas: AtlasTrajectory = field(repr=False, default=None)
    status: str = ""

    def max_level_error(self, h: float = 1.0) -> float:
        """max |H - h| over the finite samples (meaningful for alpha = xi)."""
        pts = self.polyline
        ok = np.isfinite(pts).all(axis=1) & (pts[:, 1] < 600) & (-self.xi * pts[:, 0] < 600)
        return float(np.max(np.abs(hamiltonian(pts[ok, 0], pts[ok, 1], self.xi) - h)))


def _wcu_z(y, alpha, xi):
    # quasi-steady balance on the centre manifold near Q6: e^{-z} + (alpha/xi) z = y + 1 + 1/xi
    c = y + 1.0 + 1.0 / xi
    r = alpha / xi
    a = -math.log(c) - 1.0
    while math.exp(-a) + r * a - c < 0:
        a -= 1.0
    return brentq(lambda z: math.exp(-z) + r * z - c, a, 0.0, xtol=1e-15, rtol=1e-15)


def _sphere2(y, z):
    v = np.array([y, z, 1.0])
    return v / np.linalg.norm(v)


def wcu_seed(alpha: float, xi: float, seed_offset: float = 1e-4):
    """Point on the centre-unstable manifold of Q6 at chordal distance seed_offset from Q6.

    Distances are measured on the 2-sphere; Q6 is the direction (Y, Z, W) = (1, 0, 0).
    Returns (y, z) together with the corresponding (rho, eta) blow-up coordinates.
    """
    if not 0 < seed_offset < 0.1:
        raise DomainError("seed_offset must lie in (0, 0.1)")
    q6 = np.array([1.0, 0.0, 0.0])

    def dist(logy):
        y = math.exp(logy)
        return float(np.linalg.norm(_sphere2(y, _wcu_z(y, alpha, xi)) - q6)) - seed_offset

    logy = brentq(dist, math.log(20.0 / xi), math.log(1e100), xtol=1e-13)
    y = math.exp(logy)
    z = _wcu_z(y, alpha, xi)
    return (y, z), (-1.0 / z, math.exp(-z) / y)


def wcs_seed(alpha: float, xi: float, seed_offset: float = 1e-4):
    """Point on the centre direction of Q3 in K3_2D: w3 = seed_offset,
    y3 = alpha/xi - (1+alpha) w3/alpha (the w3^2 term vanishes)."""
    if not 0 < seed_offset < 0.1:
        raise DomainError("seed_offset must lie in (0, 0.1)")
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    w = seed_offset
    return (w, alpha / xi - (1.0 + alpha) * w / alpha)


def trace_separatrix(kind: str, alpha: float, xi: float, seed_offset: float = 1e-4,
                     w_final: float = 1e-3, rtol: float = 1e-11, continue_after_axis: bool = True,
                     span: float = 1e7) -> SeparatrixTrace:
    """Trace W^{c,u} (from Q6, forward) or W^{c,s} (into Q3, backward).

    Wcu is followed until it settles into the Q1 regime of K3_2D
    (w3 <= w_final) or, when ``continue_after_axis`` is false, until its first
    crossing of the y-axis.  Wcs is followed backward until its first y-axis
    crossing.
    """
    if xi <= 0 or alpha <= 0:
        raise DomainError("alpha and xi must be positive")
    if kind == "Wcu":
        (y, z), (rho, eta) = wcu_seed(alpha, xi, seed_offset)
        stop_axis = None if continue_after_axis else 1
        at = integrate_reduced_atlas(alpha, xi, (y, z), ChartId.R2, 1, span=span, rtol=rtol,
                                     stop_axis=stop_axis, axis_direction=1,
                                     w_final=w_final if continue_after_axis else None,
                                     origin_radius=1e-3)
        seed, seed_chart = (rho, eta), ChartId.KAP3_EXP.value
        if continue_after_axis and at.status != "q1":
            raise TraceError(f"Wcu did not reach the Q1 regime (status {at.status})",
                             last_chart=at.final_chart.value)
    elif kind == "Wcs":
        seed = wcs_seed(alpha, xi, seed_offset)
        seed_chart = ChartId.K3_2D.value
        at = integrate_reduced_atlas(alpha, xi, seed, ChartId.K3_2D, -1, span=span, rtol=rtol,
                                     stop_axis=1, axis_direction=-1, origin_radius=1e-3)
        if at.status != "axis":
            raise TraceError(f"Wcs did not reach the y-axis (status {at.status})",
                             last_chart=at.final_chart.value)
    else:
        raise DomainError("kind must be 'Wcu' or 'Wcs'")
    cross = at.axis_crossings[0] if at.axis_crossings else None
    cy = float(cross.state[0]) if cross is not None else None
    ce = float(axis_energy(cy, xi)) if cross is not None else None
    return SeparatrixTrace(kind=kind, alpha=alpha, xi=xi, seed=tuple(seed), seed_chart=seed_chart,
                           polyline=at.reduced_points(), charts=at.chart_tags(), t_physical=at.times(),
                           crossing_y=cy, crossing_energy=ce, atlas=at, status=at.status)


# --- singular cycle ---------------------------------------------------------------


SEGMENT_TAGS = ("gamma12", "gamma24", "gamma45", "gamma56", "Wcu")


@dataclass
class SingularCycle:
    alpha: float
    xi: float
    segments: list  # (tag, (N, 4) sphere polyline)
    corners: dict  # name -> sphere point
    corner_chart_coords: dict

    def all_points(self) -> np.ndarray:
        return np.vstack([p for _, p in self.segments])

    def segment(self, tag):
        for t, p in self.segments:
            if t == tag:
                return p
        raise KeyError(tag)

    def max_junction_gap(self) -> float:
        gaps = []
        n = len(self.segments)
        for i in range(n):
            a = self.segments[i][1][-1]
            b = self.segments[(i + 1) % n][1][0]
            gaps.append(float(np.linalg.norm(a - b)))
        return max(gaps)

    def to_csv(self, path):
        """Segment polylines as rows (segment, X, Y, Z, W)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["segment", "X", "Y", "Z", "W"])
            for tag, poly in self.segments:
                for pt in poly:
                    w.writerow([tag] + [repr(float(v)) for v in pt])

    def corner_table(self):
        return [{"name": k, "chart": self.corner_chart_coords[k][0],
                 "chart_coords": [float(v) for v in self.corner_chart_coords[k][1]],
                 "sphere": [float(v) for v in self.corners[k]]} for k in self.corners]

    def to_json(self) -> str:
        return json.dumps({"alpha": self.alpha, "xi": self.xi, "metric": "chordal on S^{3,+} (R^4)",
                           "segments": [[t, len(p)] for t, p in self.segments],
                           "corners": self.corner_table(),
                           "max_junction_gap": self.max_junction_gap()}, indent=2)

    def without(self, tag) -> "SingularCycle":
        return SingularCycle(self.alpha, self.xi, [(t, p) for t, p in self.segments if t != tag],
                             self.corners, self.corner_chart_coords)


def build_gamma0(alpha: float, xi: float, n_per_segment: int = 400, seed_offset: float = 1e-4,
                 w_final: float = 1e-3) -> SingularCycle:
    """Construct the singular cycle Q1 -> Q2 -> Q4 -> Q5 -> Q6 -> Q1 on the 3-sphere."""
    if not alpha > xi:
        raise DomainError("the singular cycle needs alpha > xi")
    a = alpha
    s = np.linspace(0.0, 1.0, n_per_segment)
    zero = np.zeros_like(s)
    # gamma12: K3_3D, x3 from -1 to -1-alpha on y3 = w3 = 0
    g12 = k3_to_sphere(-1.0 - a * s, zero, zero)
    # gamma24: K3_3D, x3 = -1-alpha, y3 from 0 to 2 alpha/xi
    g24 = k3_to_sphere(np.full_like(s, -1.0 - a), 2.0 * a / xi * s, zero)
    # gamma45: K1_3D fast fibre at x1 = -(xi/2a)(1+a), z1 from xi/(2a) down to (xi/2a)(1-a)
    k = xi / (2.0 * a)
    z45 = k - (k - k * (1.0 - a)) * s
    g45 = k1_to_sphere(np.full_like(s, -k * (1.0 + a)), z45, zero)
    # gamma56: K1_3D on x1 + z1 + xi = 0, z1 from (xi/2a)(1-a) to 0
    z56 = k * (1.0 - a) * (1.0 - s)
    g56 = k1_to_sphere(-xi - z56, z56, zero)
    tr = trace_separatrix("Wcu", a, xi, seed_offset, w_final=w_final)
    wcu = tr.atlas.sphere_points_on_critical_manifold(xi)
    corners = {}
    coords = {}
    for name in ("Q1", "Q2", "Q4", "Q5", "Q6"):
        fp = fixed_point(name, xi, a)
        coords[name] = (fp.sphere_chart.value, fp.sphere_coords)
        corners[name] = chart_to_sphere(fp.sphere_coords, fp.sphere_chart)
    wcu = np.vstack([corners["Q6"], wcu, corners["Q1"]])
    segs = [("gamma12", g12), ("gamma24", g24), ("gamma45", g45), ("gamma56", g56), ("Wcu", wcu)]
    return SingularCycle(alpha=a, xi=xi, segments=segs, corners=corners, corner_chart_coords=coords)


# --- limit cycles ---------------------------------------------------------------------


@dataclass
class LimitCycle:
    params: Params
    section: str
    section_point: np.ndarray
    trajectory: Trajectory
    period: float
    amplitude_y: float
    y_max: float
    y_min: float
    multipliers: np.ndarray
    trivial_multiplier: complex
    nontrivial_multipliers: np.ndarray
    stable: bool
    closure_gap: float
    newton_iterations: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def axis_energy(self) -> float:
        """H at the positive y-axis crossing (the section point)."""
        return float(axis_energy(self.section_point[1], self.params.xi))

    @property
    def max_nontrivial_modulus(self) -> float:
        return float(np.max(np.abs(self.nontrivial_multipliers)))

    def sphere_points(self, n: int = 4000) -> np.ndarray:
        ts = np.unique(np.concatenate([self.trajectory.t, np.linspace(0.0, self.period, n)]))
        pts = self.trajectory(ts)
        return project_to_sphere(pts.T).T

    def to_csv(self, path):
        """One period of the cycle: t, x, y, z and the defect z + xi y + x."""
        tr = self.trajectory
        d = tr.y[:, 2] + self.params.xi * tr.y[:, 1] + tr.y[:, 0]
        tr.to_csv(path, extra={"defect": d})

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def as_dict(self):
        return {
            "params": self.params.as_dict(), "section": self.section,
            "section_point": list(map(float, self.section_point)), "period": self.period,
            "amplitude_y": self.amplitude_y, "y_max": self.y_max, "y_min": self.y_min,
            "multipliers": [[float(m.real), float(m.imag)] for m in self.multipliers],
            "trivial_multiplier": [float(self.trivial_multiplier.real), float(self.trivial_multiplier.imag)],
            "nontrivial_moduli": [float(abs(m)) for m in self.nontrivial_multipliers],
            "stable": self.stable, "closure_gap": self.closure_gap,
            "axis_energy": self.axis_energy, "newton_iterations": self.newton_iterations,
            "diagnostics": {k: v for k, v in self.diagnostics.items() if isinstance(v, (int, float, str, bool))},
        }


def _cycle_cfg(rtol):
    return IntegratorConfig(rtol=rtol, atol=(1e-12, 1e-12, 1e-11))


def _section_event():
    return EventSpec(lambda t, s: s[2], direction=-1, terminal=True, name="section")


def return_map(p: Params, u, rtol: float = 1e-10, t_max: float = 1e5):
    """One return to {z = 0, z' < 0} from (x, y, 0); returns (x', y', T, trajectory)."""
    f, jac = slow_field(p)
    s0 = np.array([u[0], u[1], 0.0])
    fz = f(0.0, s0)[2]
    if not fz < 0:
        raise DomainError("start point is not on the descending side of the section")
    up = EventSpec(lambda t, s: s[2], direction=1, terminal=False, name="up")
    tr = integrate(f, jac, s0, (0.0, t_max), _cycle_cfg(rtol), [up, _section_event()])
    if tr.status != "event":
        raise SearchError("orbit did not return to the section")
    e = tr.events[-1]
    return np.array([e.state[0], e.state[1]]), e.t, tr


def _return_with_jacobian(p: Params, u, rtol: float, t_max: float = 1e5):
    f, jac = slow_field(p)
    n = 3

    def aug(t, v):
        s = v[:3]
        J = jac(t, s)
        return np.concatenate([f(t, s), (J @ v[3:].reshape(3, 3)).ravel()])

    def aug_jac(t, v):
        J = jac(t, v[:3])
        A = np.zeros((12, 12))
        A[:3, :3] = J
        A[3:, 3:] = np.kron(J, np.eye(3))
        return A

    v0 = np.concatenate([[u[0], u[1], 0.0], np.eye(3).ravel()])
    cfg = IntegratorConfig(rtol=rtol, atol=np.concatenate([[1e-12, 1e-12, 1e-11], np.full(9, 1e-10)]))
    ev = EventSpec(lambda t, v: v[2], direction=-1, terminal=True, name="section")
    tr = integrate(aug, aug_jac, v0, (0.0, t_max), cfg, [ev])
    if tr.status != "event":
        raise SearchError("orbit did not return to the section")
    vT = tr.final
    sT = vT[:3]
    M = vT[3:].reshape(3, 3)
    fT = f(0.0, sT)
    # derivative of the return map, projected along the flow onto the section
    Pm = M - np.outer(fT, M[2]) / fT[2]
    return sT[:2], float(tr.t[-1]), Pm[:2, :2], M


def _default_guess(p: Params):
    """A section point: from the Melnikov prediction near the Hopf point, else (y=1 on C0)."""
    from .hamiltonian import yD_from_h
    from .perturbation import alpha_M, hopf_alpha

    if abs(p.alpha - p.xi) < 5 * p.epsilon * p.xi and p.alpha > hopf_alpha(p.xi, p.epsilon):
        try:
            def g(h):
                return alpha_M(h, p.xi, p.epsilon, tol=1e-8).alpha_M - p.alpha
            h = brentq(g, 1e-4, 0.6, xtol=1e-6)
            y = yD_from_h(h, p.xi)
            return np.array([-p.xi * y, y])
        except (ValueError, ArithmeticError):
            pass
    return np.array([-p.xi * 1.0, 1.0])


def find_limit_cycle(p: Params, guess=None, rtol: float = 1e-10, tol: float = 1e-9,
                     max_newton: int = 30, warmup: int = 3, n_chunks: int = 8,
                     compute_floquet: bool = True, chunk_trace: Optional[float] = None,
                     best_effort: bool = False) -> LimitCycle:
    """Locate an attracting (or saddle) limit cycle of the full system.

    ``guess`` is a section point (x, y) on {z = 0}, or None.  A few plain
    return-map iterations are followed by damped Newton steps using the
    return-map Jacobian from the variational equations.

    ``chunk_trace`` bounds the drop of the trace integral between QR
    re-orthonormalisations of the monodromy integration.  Only with it set
    (e.g. 5) does the determinant match exp(int tr J) on stiff cycles; the cost
    grows like 1/eps.

    ``best_effort`` admits eps below 1e-6; the result is flagged in its diagnostics.
    """
    p.require_full()
    if p.epsilon > 1e-1 or (p.epsilon < 1e-6 and not best_effort):
        raise DomainError("epsilon outside the supported range [1e-6, 1e-1]")
    from .perturbation import hopf_alpha

    if not p.alpha > hopf_alpha(p.xi, p.epsilon):
        raise DomainError("alpha must exceed the Hopf value")
    u = np.asarray(guess if guess is not None else _default_guess(p), dtype=float)
    if u.size == 3:
        u = u[:2]
    f, jac = slow_field(p)
    history = []
    for _ in range(warmup):
        try:
            u_new, _, _ = return_map(p, u, rtol)
        except DomainError:
            # not on the descending side: take the next section crossing instead
            tr = integrate(f, jac, [u[0], u[1], 0.0], (0.0, 1e5), _cycle_cfg(rtol), [_section_event()])
            u_new = tr.final[:2]
        history.append(float(np.linalg.norm(u_new - u)))
        u = u_new
    it = 0
    gap = math.inf
    while it < max_newton:
        it += 1
        uT, T, DP, M = _return_with_jacobian(p, u, rtol)
        F = uT - u
        gap = float(np.linalg.norm(F))
        history.append(gap)
        if gap <= tol * max(1.0, float(np.linalg.norm(u))):
            break
        try:
            step = np.linalg.solve(DP - np.eye(2), -F)
        except np.linalg.LinAlgError:
            step = F
        lam = 1.0
        accepted = False
        while lam > 1e-3:
            cand = u + lam * step
            try:
                uc, _, _ = return_map(p, cand, rtol)
                if np.linalg.norm(uc - cand) < gap or lam < 2e-3:
                    u = cand
                    accepted = True
                    break
            except (DomainError, SearchError, IntegrationError, GuardTripped):
                pass
            lam *= 0.5
        if not accepted:
            u = uT
    else:
        raise SearchError(f"Newton did not converge (last gap {gap:.3g})")
    # final pass: closed orbit, period, amplitude
    u_ret, T, tr = return_map(p, u, rtol)
    closure = float(np.linalg.norm(u_ret - u))
    ups = tr.events_named("up")
    y_max = float(u[1])
    y_min = float(ups[0].state[1]) if ups else float(np.min(tr.y[:, 1]))
    diag = {"newton_history": history, "n_steps": tr.diagnostics.get("n_steps", 0),
            "best_effort": bool(p.epsilon < 1e-6)}
    if compute_floquet:
        vr = integrate_variational_full(f, jac, [u[0], u[1], 0.0], T, _cycle_cfg(rtol), n_chunks=n_chunks,
                                        chunk_trace=chunk_trace)
        M = vr.monodromy
        diag["log_abs_det_qr"] = vr.log_abs_det
        diag["trace_integral"] = vr.trace_integral
        diag["abel_liouville_rel_error"] = vr.abel_liouville_rel_error
        diag["log_stretch"] = vr.log_stretch.tolist()
    mus = np.linalg.eigvals(M)
    # the trivial multiplier belongs to the eigenvector along the flow
    w, V = np.linalg.eig(M)
    f0 = f(0.0, np.array([u[0], u[1], 0.0]))
    f0 = f0 / np.linalg.norm(f0)
    align = [abs(np.vdot(V[:, k] / np.linalg.norm(V[:, k]), f0)) for k in range(3)]
    k_triv = int(np.argmax(align))
    trivial = complex(w[k_triv])
    nontriv = np.delete(w, k_triv)
    stable = bool(np.all(np.abs(nontriv) < 1.0))
    diag["trivial_error"] = abs(trivial - 1.0)
    return LimitCycle(params=p, section="z=0, dz/dt<0", section_point=np.array([u[0], u[1], 0.0]),
                      trajectory=tr, period=float(T), amplitude_y=y_max - y_min, y_max=y_max, y_min=y_min,
                      multipliers=mus, trivial_multiplier=trivial, nontrivial_multipliers=nontriv,
                      stable=stable, closure_gap=closure, newton_iterations=it, diagnostics=diag)


# --- distances ----------------------------------------------------------------------------


def _densify(poly: np.ndarray, h: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    out = [poly[:1]]
    for i, L in enumerate(seg):
        k = max(1, int(math.ceil(L / h)))
        s = np.linspace(0.0, 1.0, k + 1)[1:, None]
        out.append(poly[i] + s * (poly[i + 1] - poly[i]))
    return np.vstack(out)


def hausdorff(A: np.ndarray, B: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two point clouds (Euclidean/chordal)."""
    da, _ = cKDTree(B).query(A)
    db, _ = cKDTree(A).query(B)
    return float(max(da.max(), db.max()))


def polyline_hausdorff(polys_a, polys_b, h0: float = 0.02, rel: float = 0.01, max_refine: int = 8) -> float:
    """Hausdorff distance between unions of polylines, densified until it changes by < rel."""
    prev = None
    h = h0
    for _ in range(max_refine):
        A = np.vstack([_densify(p, h) for p in polys_a])
        B = np.vstack([_densify(p, h) for p in polys_b])
        d = hausdorff(A, B)
        if prev is not None and abs(d - prev) <= rel * max(d, 1e-15):
            return d
        prev = d
        h *= 0.5
    return prev


def hausdorff_to_gamma0(c: LimitCycle, g: SingularCycle, h0: float = 0.02) -> float:
    """Chordal Hausdorff distance on the 3-sphere between a limit cycle and the singular cycle."""
    if abs(c.params.alpha - g.alpha) > 1e-15 or abs(c.params.xi - g.xi) > 1e-15:
        raise DomainError("cycle and singular cycle have different parameters")
    return polyline_hausdorff([c.sphere_points()], [p for _, p in g.segments], h0)


# --- bifurcation diagrams -----------------------------------------------------------------


@dataclass
class BifurcationRow:
    param: float
    amplitude: float
    period: float
    max_multiplier: float
    status: str
    axis_energy: float = math.nan

    def as_list(self):
        return [self.param, self.amplitude, self.period, self.max_multiplier, self.status]


def write_bifurcation_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "amplitude", "period", "max_multiplier", "status"])
        for r in rows:
            w.writerow([repr(float(r.param)), repr(float(r.amplitude)), repr(float(r.period)),
                        repr(float(r.max_multiplier)), r.status])


def bifurcation_diagram(xi: float, mode: str, grid, eps: Optional[float] = None,
                        alpha: Optional[float] = None, rtol: float = 1e-10, guess=None) -> list:
    """Continuation of limit cycles over a parameter grid.

    mode "alpha": amplitude versus alpha at fixed ``eps``;
    mode "eps": amplitude versus eps at fixed ``alpha``.
    Failures are recorded as gap rows and the sweep continues.
    """
    rows = []
    u = guess
    for v in grid:
        v = float(v)
        if mode == "alpha":
            if eps is None:
                raise DomainError("mode 'alpha' needs eps")
            p = Params(eps, xi, v)
        elif mode == "eps":
            if alpha is None:
                raise DomainError("mode 'eps' needs alpha")
            p = Params(v, xi, alpha)
        else:
            raise DomainError("mode must be 'alpha' or 'eps'")
        try:
            c = find_limit_cycle(p, u, rtol=rtol)
            rows.append(BifurcationRow(v, c.amplitude_y, c.period, c.max_nontrivial_modulus,
                                       "ok" if c.stable else "unstable", c.axis_energy))
            u = c.section_point[:2]
        except (SearchError, IntegrationError, DomainError, GuardTripped) as exc:
            rows.append(BifurcationRow(v, math.nan, math.nan, math.nan, f"gap: {type(exc).__name__}"))
    return rows


def fit_power_law(x, y) -> tuple:
    """Least-squares fit of y = C x^k on log-log axes; returns (k, C)."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    k, c = np.polyfit(lx, ly, 1)
    return float(k), float(math.exp(c))


# --- finite-time blow-up and the reduced dichotomy -----------------------------------------


@dataclass
class BlowupResult:
    t_star: float
    estimates: dict  # w3 level -> slow time at which it was reached
    cauchy_differences: list
    path_charts: list


def finite_time_blowup(alpha: float, xi: float, s0, levels=(1e-1, 1e-2, 1e-3), span: float = 1e6,
                       rtol: float = 1e-11) -> BlowupResult:
    """Time at which a reduced trajectory reaches infinity.

    The orbit is followed into chart K3_2D and the original time is recovered
    from dt = exp(-1/w3) ds.  The estimates at the given w3 levels form a
    Cauchy sequence whose limit is t_star.
    """
    s0 = np.asarray(s0, dtype=float)
    if alpha < xi:
        raise DomainError("finite-time blow-up needs alpha >= xi")
    if alpha == xi and hamiltonian(s0[0], s0[1], xi) < 1.0:
        raise DomainError("the orbit is closed (H < 1); no blow-up")
    levels = sorted(levels, reverse=True)
    evs = [EventSpec((lambda lv: (lambda t, s: s[0] - lv))(lv), direction=-1, terminal=False, name=f"w={lv}")
           for lv in levels]
    at = integrate_reduced_atlas(alpha, xi, s0, ChartId.R2, 1, span=span, rtol=rtol,
                                 w_final=levels[-1], extra_k3_events=evs, max_pieces=400)
    if at.status != "q1":
        raise DomainError(f"trajectory did not blow up within the budget (status {at.status})")
    est = {}
    for pc in at.pieces:
        if pc.chart != ChartId.K3_2D:
            continue
        for e in pc.traj.events:
            if e.name.startswith("w="):
                est[float(e.name[2:])] = float(e.state[-1])
    est[levels[-1]] = float(at.final_state[-1])
    vals = [est[lv] for lv in levels if lv in est]
    diffs = [abs(b - a) for a, b in zip(vals[:-1], vals[1:])]
    return BlowupResult(t_star=vals[-1], estimates=est, cauchy_differences=diffs,
                        path_charts=[pc.chart.value for pc in at.pieces])


def crossing_energies(alpha: float, xi: float, s0, n_max: int = 200, span: float = 1e6,
                      rtol: float = 1e-11, z_escape: float = 50.0):
    """Energies H(y, 0) at successive positive y-axis crossings of a reduced orbit.

    Stops when the orbit escapes (z > z_escape) or after n_max crossings.
    Returns (energies, status).
    """
    at = integrate_reduced_atlas(alpha, xi, s0, ChartId.R2, 1, span=span, rtol=rtol,
                                 stop_axis=n_max, axis_direction=-1, z_escape=z_escape, origin_radius=1e-12)
    hs = [axis_energy(e.state[0], xi) for e in at.axis_crossings if e.state[0] > 0]
    return np.array(hs), at.status


def dichotomy_check(alpha: float, xi: float, n_seeds: int = 3, origin_radius: float = 1e-3,
                    w_final: float = 1e-3, seed_offset: float = 1e-4):
    """Seeds on the negative y-axis inside/outside W^{c,s} for alpha < xi.

    Returns a dict with the Wcs crossing, and for each seed its fate
    ("origin" or "q1").
    """
    if not alpha < xi:
        raise DomainError("the inside/outside dichotomy is stated for alpha < xi")
    wcs = trace_separatrix("Wcs", alpha, xi, seed_offset)
    yc = wcs.crossing_y
    inside = [yc * k / (n_seeds + 1) for k in range(1, n_seeds + 1)]
    outside = [yc * (1.0 + 0.5 * k / n_seeds) for k in range(1, n_seeds + 1)]
    fates = {}
    for y0 in inside + outside:
        at = integrate_reduced_atlas(alpha, xi, (y0, 0.0), ChartId.R2, 1, span=1e6,
                                     origin_radius=origin_radius, w_final=w_final)
        fates[y0] = at.status
    return {"wcs_crossing": yc, "inside": inside, "outside": outside, "fates": fates}
