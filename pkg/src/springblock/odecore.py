"""Numerical engine: adaptive integration, events, variational equations, quadrature.

The step-level work is delegated to scipy's ``Radau`` (L-stable, stiff) and
``DOP853`` (explicit, non-stiff) solver classes, which are driven one step at
a time here so that event localisation, the overflow guard, step-size floors
and trajectory bookkeeping follow this package's own rules.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate as sci_integrate
from scipy.integrate import DOP853, OdeSolution, Radau
from scipy.optimize import brentq

from .errors import (
    AccuracyError,
    DomainError,
    GuardTripped,
    IntegrationError,
    RangeError,
)

log = logging.getLogger(__name__)

STIFF = "stiff"
NONSTIFF = "nonstiff"
_METHODS = {STIFF: Radau, NONSTIFF: DOP853, "radau": Radau, "dop853": DOP853}


@dataclass(frozen=True)
class IntegratorConfig:
    """Integrator settings.

    ``atol=None`` resolves to (1e-10, 1e-10, 1e-8) for 3-component states and
    to 1e-10 otherwise.  ``guard_index`` selects the component watched by the
    overflow guard (``None`` disables the guard).
    """

    method: str = STIFF
    rtol: float = 1e-8
    atol: Optional[object] = None
    max_step: float = math.inf
    min_step: float = 0.0
    max_steps: int = 2_000_000
    z_guard: float = 600.0
    guard_index: Optional[int] = 2
    first_step: Optional[float] = None
    check_jacobian: bool = False

    def __post_init__(self):
        if self.method not in _METHODS:
            raise DomainError(f"unknown method {self.method!r}")
        if not (0 < self.rtol <= 1e-2):
            raise DomainError("rtol must satisfy 0 < rtol <= 1e-2")
        if self.atol is not None and np.any(np.asarray(self.atol, dtype=float) <= 0):
            raise DomainError("atol must be positive")
        if not (0 <= self.min_step < self.max_step):
            raise DomainError("need 0 <= min_step < max_step")
        if self.max_steps <= 0:
            raise DomainError("max_steps must be positive")

    def resolved_atol(self, n: int):
        if self.atol is None:
            return np.array([1e-10, 1e-10, 1e-8]) if n == 3 else 1e-10
        a = np.asarray(self.atol, dtype=float)
        if a.ndim == 0:
            return float(a)
        if a.shape != (n,):
            raise DomainError(f"atol has {a.size} entries for a {n}-component state")
        return a

    def replace(self, **kw) -> "IntegratorConfig":
        d = dict(self.__dict__)
        d.update(kw)
        return IntegratorConfig(**d)


@dataclass
class EventSpec:
    """Scalar event g(t, s) = 0.

    direction: +1 fires on increasing crossings, -1 on decreasing, 0 on both.
    A zero of g at the initial time never fires.
    """

    fun: Callable
    direction: int = 0
    terminal: bool = False
    tol: float = 1e-12
    name: str = ""


@dataclass(frozen=True)
class EventRecord:
    t: float
    index: int
    name: str
    state: np.ndarray
    direction: int


@dataclass
class Trajectory:
    """Integrated trajectory.

    ``t`` is monotone in the direction of integration, ``y`` has one row per
    node.  Calling the object evaluates the dense output; stored nodes are
    returned exactly.
    """

    t: np.ndarray
    y: np.ndarray
    sol: Optional[OdeSolution] = None
    events: list = field(default_factory=list)
    chart: Optional[list] = None
    t_physical: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)
    status: str = "complete"

    def __len__(self):
        return len(self.t)

    @property
    def final(self) -> np.ndarray:
        return self.y[-1].copy()

    def __call__(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((t_arr.size, self.y.shape[1]))
        idx = np.searchsorted(self.t, t_arr) if self.t[-1] >= self.t[0] else None
        for k, tk in enumerate(t_arr):
            hit = None
            if idx is not None:
                i = idx[k]
                if i < len(self.t) and self.t[i] == tk:
                    hit = i
            else:
                w = np.nonzero(self.t == tk)[0]
                hit = int(w[0]) if w.size else None
            if hit is not None:
                out[k] = self.y[hit]
            elif self.sol is not None:
                out[k] = self.sol(tk)
            else:
                out[k] = [np.interp(tk, self.t, self.y[:, j]) for j in range(self.y.shape[1])]
        return out[0] if np.ndim(t) == 0 else out

    def events_named(self, name):
        return [e for e in self.events if e.name == name]

    def to_csv(self, path, columns: Sequence[str] = ("x", "y", "z"), extra=None):
        """Write t, state columns[, chart, t_physical] and optional extra columns."""
        header = ["t", *columns]
        extra = extra or {}
        header += list(extra)
        if self.chart is not None:
            header.append("chart")
        if self.t_physical is not None:
            header.append("t_physical")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self.t)):
                row = [repr(float(self.t[i]))] + [repr(float(v)) for v in self.y[i]]
                row += [repr(float(extra[k][i])) for k in extra]
                if self.chart is not None:
                    row.append(str(self.chart[i]))
                if self.t_physical is not None:
                    row.append(repr(float(self.t_physical[i])))
                w.writerow(row)


def _wrap_field(field_fn, n):
    nan = np.full(n, np.nan)

    def fun(t, s):
        try:
            v = np.asarray(field_fn(t, s), dtype=float)
        except (RangeError, FloatingPointError, OverflowError, DomainError):
            # NaN forces the step to be rejected and retried smaller
            return nan
        return v

    return fun


def _wrap_jac(jac_fn, n):
    if jac_fn is None:
        return None

    def jac(t, s):
        try:
            return np.asarray(jac_fn(t, s), dtype=float)
        except (RangeError, FloatingPointError, OverflowError, DomainError):
            return np.zeros((n, n))

    return jac


def fd_jacobian(field_fn, t, s, h=1e-7):
    """Central finite-difference Jacobian of field_fn(t, s)."""
    s = np.asarray(s, dtype=float)
    n = s.size
    J = np.empty((n, n))
    for j in range(n):
        d = h * max(1.0, abs(s[j]))
        sp = s.copy()
        sm = s.copy()
        sp[j] += d
        sm[j] -= d
        J[:, j] = (np.asarray(field_fn(t, sp)) - np.asarray(field_fn(t, sm))) / (2 * d)
    return J


def _jacobian_deviation(field_fn, jac_fn, t, s):
    Ja = np.asarray(jac_fn(t, s), dtype=float)
    Jf = fd_jacobian(field_fn, t, s)
    scale = max(np.max(np.abs(Ja)), 1e-300)
    return float(np.max(np.abs(Ja - Jf)) / scale)


def integrate(field_fn, jacobian, s0, t_span, cfg: IntegratorConfig = IntegratorConfig(),
              events: Sequence[EventSpec] = ()) -> Trajectory:
    """Integrate ``s' = field_fn(t, s)`` over ``t_span``.

    Parameters
    ----------
    field_fn : callable(t, s) -> array
    jacobian : callable(t, s) -> matrix, or None (finite differences)
    s0 : initial state
    t_span : (t0, t1); t1 < t0 integrates backward
    cfg : IntegratorConfig
    events : sequence of EventSpec

    Returns
    -------
    Trajectory
        Terminates at t1 or at the first terminal event.

    Raises
    ------
    GuardTripped
        ``|s[guard_index]|`` exceeded ``cfg.z_guard``; the partial trajectory
        (ending on the guard) and the last state are attached.
    IntegrationError
        Step-size underflow, step budget exhausted or solver failure.
    """
    s0 = np.array(s0, dtype=float)
    n = s0.size
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t0 == t1:
        raise DomainError("empty time span")
    if not np.all(np.isfinite(s0)):
        raise DomainError("non-finite initial state")
    fun = _wrap_field(field_fn, n)
    jac = _wrap_jac(jacobian, n)
    if np.any(np.isnan(fun(t0, s0))):
        raise RangeError("field cannot be evaluated at the initial state")
    gi = cfg.guard_index if (cfg.guard_index is not None and cfg.guard_index < n) else None
    if gi is not None and abs(s0[gi]) > cfg.z_guard:
        raise DomainError("initial state already outside the overflow guard")

    solver_cls = _METHODS[cfg.method]
    kw = dict(rtol=cfg.rtol, atol=cfg.resolved_atol(n), max_step=cfg.max_step)
    if cfg.first_step is not None:
        kw["first_step"] = min(cfg.first_step, abs(t1 - t0))
    if solver_cls is Radau and jac is not None:
        kw["jac"] = jac
    solver = solver_cls(fun, t0, s0, t1, **kw)

    ts = [t0]
    ys = [s0.copy()]
    interps = []
    records = []
    diag = {"n_steps": 0, "n_rejected_nan": 0, "method": cfg.method}
    if cfg.check_jacobian and jacobian is not None:
        diag["jacobian_max_rel_dev"] = _jacobian_deviation(field_fn, jacobian, t0, s0)

    g_prev = [float(ev.fun(t0, s0)) for ev in events]
    stop = False

    def partial(status):
        sol = OdeSolution(np.array(ts), interps) if interps else None
        return Trajectory(np.array(ts), np.array(ys), sol, records, diagnostics=diag, status=status)

    while not stop:
        if diag["n_steps"] >= cfg.max_steps:
            raise IntegrationError(f"step budget {cfg.max_steps} exhausted at t={ts[-1]:.6g}",
                                   partial("max_steps"))
        msg = solver.step()
        if solver.status == "failed":
            raise IntegrationError(f"solver failed at t={solver.t:.6g}: {msg}", partial("failed"))
        diag["n_steps"] += 1
        t_old, t_new = solver.t_old, solver.t
        y_new = solver.y.copy()
        if not np.all(np.isfinite(y_new)):
            raise IntegrationError(f"non-finite state at t={t_new:.6g}", partial("failed"))
        if (cfg.min_step > 0 and solver.status == "running"
                and abs(t_new - t_old) < cfg.min_step):
            raise IntegrationError(f"step size underflow ({abs(t_new - t_old):.3g}) at t={t_new:.6g}",
                                   partial("underflow"))
        dense = solver.dense_output()

        # guard: truncate at the crossing of |s_gi| = z_guard
        if gi is not None and abs(y_new[gi]) > cfg.z_guard:
            target = math.copysign(cfg.z_guard, y_new[gi])
            tg = brentq(lambda tt: dense(tt)[gi] - target, t_old, t_new, xtol=1e-14, rtol=1e-15)
            sg = dense(tg)
            ts.append(tg)
            ys.append(sg)
            interps.append(dense)
            traj = partial("guard")
            raise GuardTripped(f"|s[{gi}]| reached {cfg.z_guard} at t={tg:.6g}", traj, sg.copy())

        # events
        hits = []
        for k, ev in enumerate(events):
            g_new = float(ev.fun(t_new, y_new))
            g_old = g_prev[k]
            g_prev[k] = g_new
            if g_old == 0.0 or np.sign(g_new) == np.sign(g_old):
                continue
            direction = 1 if g_old < 0 else -1
            if ev.direction and direction != ev.direction:
                continue
            if g_new == 0.0:
                te = t_new
            else:
                te = brentq(lambda tt: float(ev.fun(tt, dense(tt))), t_old, t_new,
                            xtol=ev.tol, rtol=1e-15, maxiter=200)
            hits.append((te, k, direction))
        hits.sort(key=lambda h: (h[0] - t_old) * np.sign(t_new - t_old))
        t_stop = None
        for te, k, direction in hits:
            se = y_new.copy() if te == t_new else dense(te)
            records.append(EventRecord(te, k, events[k].name, se, direction))
            if events[k].terminal:
                t_stop = te
                break
        if t_stop is not None:
            interps.append(dense)
            if t_stop != t_old:
                ts.append(t_stop)
                ys.append(records[-1].state.copy())
            else:
                interps.pop()
            return Trajectory(np.array(ts), np.array(ys),
                              OdeSolution(np.array(ts), interps) if interps else None,
                              records, diagnostics=diag, status="event")
        ts.append(t_new)
        ys.append(y_new)
        interps.append(dense)
        if cfg.check_jacobian and jacobian is not None and diag["n_steps"] % 50 == 0:
            dev = _jacobian_deviation(field_fn, jacobian, t_new, y_new)
            diag["jacobian_max_rel_dev"] = max(dev, diag.get("jacobian_max_rel_dev", 0.0))
        if solver.status == "finished":
            stop = True

    traj = partial("complete")
    if cfg.check_jacobian and diag.get("jacobian_max_rel_dev", 0.0) > 1e-5:
        diag["warning"] = "analytic Jacobian deviates from finite differences by more than 1e-5"
        log.warning(diag["warning"])
    return traj


@dataclass
class VariationalResult:
    """Monodromy data from :func:`integrate_variational_full`.

    ``log_abs_det`` is the sum of log|R_ii| over the QR re-orthonormalisations,
    ``trace_integral`` the integral of tr J along the orbit.  Both estimate
    log|det M| and are compared for the Abel-Liouville check.
    """

    monodromy: np.ndarray
    final_state: np.ndarray
    log_abs_det: float
    trace_integral: float
    log_stretch: np.ndarray
    n_chunks: int

    @property
    def abel_liouville_rel_error(self) -> float:
        return abs(self.log_abs_det - self.trace_integral) / max(abs(self.trace_integral), 1e-300)


def integrate_variational_full(field_fn, jacobian, s0, period, cfg: IntegratorConfig = IntegratorConfig(),
                               n_chunks: int = 8, chunk_trace: Optional[float] = None) -> VariationalResult:
    """Integrate the state together with its variational equation over one period.

    The fundamental matrix is re-orthonormalised by QR at the end of each
    chunk so that strongly contracting directions do not swamp the others.
    Chunks are ``n_chunks`` equal time slices; with ``chunk_trace`` set, a chunk
    additionally ends once the trace integral has dropped by that amount.
    """
    if jacobian is None:
        def jacobian(t, s):
            return fd_jacobian(field_fn, t, s)
    s0 = np.array(s0, dtype=float)
    n = s0.size
    if period <= 0:
        raise DomainError("period must be positive")

    def aug(t, u):
        s = u[:n]
        J = np.asarray(jacobian(t, s), dtype=float)
        Phi = u[n:n + n * n].reshape(n, n)
        return np.concatenate([np.asarray(field_fn(t, s), dtype=float), (J @ Phi).ravel(), [np.trace(J)]])

    def aug_jac(t, u):
        # block Jacobian without the second-derivative coupling term
        s = u[:n]
        J = np.asarray(jacobian(t, s), dtype=float)
        A = np.zeros((n + n * n + 1, n + n * n + 1))
        A[:n, :n] = J
        A[n:n + n * n, n:n + n * n] = np.kron(J, np.eye(n))
        return A

    base_atol = cfg.resolved_atol(n)
    atol = np.concatenate([np.broadcast_to(base_atol, (n,)), np.full(n * n, 1e-10), [1e-8]])
    sub = cfg.replace(atol=atol, guard_index=cfg.guard_index)

    s = s0.copy()
    Q = np.eye(n)
    Rprod = np.eye(n)
    log_stretch = np.zeros(n)
    trace_int = 0.0
    edges = np.linspace(0.0, period, n_chunks + 1)
    t = 0.0
    chunks = 0
    k = 1
    while t < period:
        t_end = edges[k]
        u0 = np.concatenate([s, Q.ravel(), [0.0]])
        evs = []
        if chunk_trace is not None:
            evs = [EventSpec(lambda tt, u: u[-1] + chunk_trace, direction=-1, terminal=True, name="trace")]
        tr = integrate(aug, aug_jac, u0, (t, t_end), sub, evs)
        u = tr.final
        t = float(tr.t[-1])
        if t >= t_end:
            k += 1
        s = u[:n]
        Phi = u[n:n + n * n].reshape(n, n)
        trace_int += u[-1]
        Qn, R = np.linalg.qr(Phi)
        sgn = np.sign(np.diag(R))
        sgn[sgn == 0] = 1.0
        Qn = Qn * sgn
        R = sgn[:, None] * R
        d = np.abs(np.diag(R))
        with np.errstate(divide="ignore"):
            log_stretch += np.log(d)
        Rprod = R @ Rprod
        Q = Qn
        chunks += 1
        if k > n_chunks:
            break
    M = Q @ Rprod
    return VariationalResult(M, s, float(np.sum(log_stretch)), float(trace_int), log_stretch, chunks)


def integrate_variational(field_fn, jacobian, s0, period, cfg: IntegratorConfig = IntegratorConfig(),
                          n_chunks: int = 8) -> np.ndarray:
    """Monodromy matrix of ``s' = field_fn(t, s)`` over ``[0, period]`` from ``s0``."""
    return integrate_variational_full(field_fn, jacobian, s0, period, cfg, n_chunks).monodromy


def quad_adaptive(integrand, a: float, b: float, tol: float = 1e-10,
                  decay=None, limit: int = 500, points=None):
    """Adaptive quadrature with an error estimate.

    For ``b = inf`` a decay hint ``(rate, const)`` meaning
    ``|f(x)| <= const * exp(-rate * x)`` is required; the integral is cut at
    the point where the analytic tail bound ``const/rate * exp(-rate*x)`` is
    below ``tol / 10`` and that bound is added to the error estimate.

    Returns (value, error_estimate); raises AccuracyError if the estimate
    exceeds ``tol``.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    tail = 0.0
    if math.isinf(b):
        if decay is None:
            raise DomainError("an infinite upper limit needs a decay hint (rate, const)")
        rate, const = decay
        if rate <= 0 or const < 0:
            raise DomainError("decay hint needs rate > 0 and const >= 0")
        cut = max(a, math.log(max(const / rate, 1e-300) * 10.0 / tol) / rate)
        tail = const / rate * math.exp(-rate * cut)
        b = cut
    kw = dict(epsabs=tol / 10.0, epsrel=0.0, limit=limit, full_output=1)
    if points is not None:
        kw["points"] = [p for p in points if a < p < b]
    res = sci_integrate.quad(integrand, a, b, **kw)
    value, err = res[0], res[1]
    err = err + tail
    if not (err <= tol) or not math.isfinite(value):
        raise AccuracyError(f"quadrature error estimate {err:.3g} exceeds tol {tol:.3g}")
    return value, err


def trapezoid_oracle(integrand_values, t):
    """Composite trapezoid rule on samples (independent check of quadrature)."""
    return float(np.trapezoid(integrand_values, t))
