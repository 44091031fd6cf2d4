"""Command-line interface.

Every command writes its outputs plus a ``manifest.json`` (configuration,
versions, tolerances, wall time) into the output directory, which defaults to
``$SPRINGBLOCK_OUT`` or ``./springblock_out``.

Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import DomainError, SpringBlockError

MANIFEST_SCHEMA = 1
OUT_ENV = "SPRINGBLOCK_OUT"
log = logging.getLogger("springblock")


class UsageError(Exception):
    pass


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:step`` (stop included when hit to rounding) or a comma list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid {text!r} is not start:stop:step")
        try:
            a, b, s = (float(v) for v in parts)
        except ValueError as exc:
            raise UsageError(f"grid {text!r}: {exc}") from None
        if s <= 0 or b < a:
            raise UsageError(f"grid {text!r} needs step > 0 and stop >= start")
        n = int(math.floor((b - a) / s + 1e-9)) + 1
        return np.round(a + s * np.arange(n), 12)
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"grid {text!r}: {exc}") from None
    if not vals:
        raise UsageError("empty grid")
    return np.array(vals)


def _fmt(v):
    return repr(float(v))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _write_json(path: Path, doc):
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def _write_rows(path: Path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(v if isinstance(v, str) else _fmt(v) for v in r) + "\n")


# --- commands ---------------------------------------------------------------------------


def _params(args, need_eps=True):
    from .model import Params

    if need_eps and not args.eps > 0:
        raise UsageError("--eps must be > 0 for the full system; "
                         "use the `reduced` command for the eps = 0 reduced flow")
    try:
        return Params(args.eps if need_eps else 0.0, args.xi, args.alpha)
    except DomainError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(args, out: Path):
    from .model import slow_field
    from .odecore import IntegratorConfig, integrate

    p = _params(args)
    if p.epsilon > 0.1:
        raise UsageError("--eps must lie in (0, 0.1]")
    s0 = [args.x0 if args.x0 is not None else -p.xi * args.y0, args.y0, args.z0]
    f, jac = slow_field(p)
    tr = integrate(f, jac, s0, (0.0, args.tmax), IntegratorConfig(rtol=args.rtol))
    d = tr.y[:, 2] + p.xi * tr.y[:, 1] + tr.y[:, 0]
    tr.to_csv(out / "trajectory.csv", extra={"defect": d})
    summary = {"n_steps": tr.diagnostics["n_steps"], "y_max": float(tr.y[:, 1].max()),
               "z_max": float(tr.y[:, 2].max()), "best_effort": p.epsilon < 1e-6}
    _write_json(out / "summary.json", summary)
    return ["trajectory.csv", "summary.json"], summary


def cmd_reduced(args, out: Path):
    from .cycles import integrate_reduced_atlas

    at = integrate_reduced_atlas(args.alpha, args.xi, (args.y0, args.z0), span=args.tmax, rtol=args.rtol,
                                 w_final=1e-3, origin_radius=1e-8)
    pts = at.reduced_points()
    _write_rows(out / "reduced.csv", ["t", "y", "z", "chart"],
                [[t, y, z, c] for t, (y, z), c in zip(at.times(), pts, at.chart_tags())])
    summary = {"status": at.status, "final_chart": at.final_chart.value}
    _write_json(out / "summary.json", summary)
    return ["reduced.csv", "summary.json"], summary


def cmd_levelset(args, out: Path):
    from .hamiltonian import trace_level_set

    if not args.h > 0:
        raise UsageError("--h must be positive")
    ls = trace_level_set(args.h, args.xi, tol=args.tol, n_points=args.n_points)
    ls.to_csv(out / "levelset.csv")
    summary = {"h": ls.h, "xi": ls.xi, "kind": ls.kind, "period": ls.period,
               "closure_gap": ls.closure_gap, "max_level_error": ls.max_level_error}
    _write_json(out / "levelset.json", summary)
    return ["levelset.csv", "levelset.json"], summary


def _melnikov_point(job):
    from .perturbation import alpha_M

    h, xi, eps, tol = job
    return alpha_M(h, xi, eps, tol)


def cmd_melnikov(args, out: Path):
    from .perturbation import write_melnikov_csv

    hs = parse_grid(args.h_grid)
    if np.any(hs <= 0) or np.any(hs >= 1):
        raise UsageError("h values must lie in (0, 1)")
    jobs = [(float(h), args.xi, args.eps, args.tol) for h in hs]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            res = list(ex.map(_melnikov_point, jobs))
    else:
        res = [_melnikov_point(j) for j in jobs]
    write_melnikov_csv(out / "melnikov.csv", res)
    summary = {"n": len(res), "ratio_first": res[0].ratio, "ratio_last": res[-1].ratio}
    return ["melnikov.csv"], summary


def cmd_hopf(args, out: Path):
    from .perturbation import hopf_locate_numeric, supercriticality_check

    if not args.eps > 0:
        raise UsageError("--eps must be > 0")
    hd = hopf_locate_numeric(args.xi, args.eps)
    doc = hd.as_dict()
    if args.check_supercritical:
        sc = supercriticality_check(args.xi, args.eps)
        doc["supercriticality"] = {k: sc[k] for k in ("decays_below", "grows_above", "saturates_above",
                                                      "final_energy_above")}
    _write_json(out / "hopf.json", doc)
    return ["hopf.json"], doc


def cmd_gamma0(args, out: Path):
    from .cycles import build_gamma0

    if not args.alpha > args.xi:
        raise UsageError("gamma0 needs --alpha > --xi")
    g = build_gamma0(args.alpha, args.xi, seed_offset=args.seed_offset)
    g.to_csv(out / "gamma0_segments.csv")
    rows = [[c["name"], c["chart"], *c["chart_coords"], *c["sphere"]] for c in g.corner_table()]
    _write_rows(out / "gamma0_corners.csv", ["name", "chart", "c1", "c2", "c3", "X", "Y", "Z", "W"], rows)
    (out / "gamma0.json").write_text(g.to_json() + "\n")
    return ["gamma0_segments.csv", "gamma0_corners.csv", "gamma0.json"], {"corners": g.corner_table()}


def cmd_cycle(args, out: Path):
    from .cycles import build_gamma0, find_limit_cycle, hausdorff_to_gamma0

    p = _params(args)
    guess = None if args.guess_y is None else (-p.xi * args.guess_y, args.guess_y)
    c = find_limit_cycle(p, guess, rtol=args.rtol, best_effort=True, chunk_trace=args.chunk_trace)
    doc = c.as_dict()
    if args.hausdorff and p.alpha > p.xi:
        doc["hausdorff_to_gamma0"] = hausdorff_to_gamma0(c, build_gamma0(p.alpha, p.xi))
        doc["hausdorff_metric"] = "chordal on S^{3,+} (artifact choice)"
    _write_json(out / "cycle.json", doc)
    c.to_csv(out / "cycle.csv")
    return ["cycle.json", "cycle.csv"], doc


def _branch(job):
    from .cycles import bifurcation_diagram

    xi, mode, grid, eps, alpha, rtol = job
    return xi, bifurcation_diagram(xi, mode, grid, eps=eps, alpha=alpha, rtol=rtol)


def cmd_bifurcate(args, out: Path):
    from .cycles import write_bifurcation_csv

    grid = parse_grid(args.grid)
    xis = parse_grid(args.xi_list) if args.xi_list else np.array([args.xi])
    if args.mode == "alpha" and not (args.eps and args.eps > 0):
        raise UsageError("mode alpha needs --eps > 0")
    if args.mode == "eps" and args.alpha is None:
        raise UsageError("mode eps needs --alpha")
    jobs = [(float(x), args.mode, grid, args.eps, args.alpha, args.rtol) for x in xis]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            res = list(ex.map(_branch, jobs))
    else:
        res = [_branch(j) for j in jobs]
    files = []
    summary = {}
    for xi, rows in res:
        name = "bifurcation.csv" if len(res) == 1 else f"bifurcation_xi{xi:g}.csv"
        write_bifurcation_csv(out / name, rows)
        files.append(name)
        summary[f"{xi:g}"] = {"n_ok": sum(r.status == "ok" for r in rows), "n": len(rows)}
    return files, summary


def cmd_atlas(args, out: Path):
    from .charts import atlas_json

    (out / "atlas.json").write_text(atlas_json(args.xi, args.alpha) + "\n")
    return ["atlas.json"], {}


# --- parser -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="springblock", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./springblock_out)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, eps=True, alpha=True, eps_default=1e-2, alpha_default=0.9):
        sp.add_argument("--xi", type=float, default=0.5)
        if alpha:
            sp.add_argument("--alpha", type=float, default=alpha_default)
        if eps:
            sp.add_argument("--eps", type=float, default=eps_default)

    sp = sub.add_parser("simulate", help="integrate the full system")
    common(sp)
    sp.add_argument("--tmax", type=float, default=200.0)
    sp.add_argument("--x0", type=float, default=None, help="default: on the critical manifold")
    sp.add_argument("--y0", type=float, default=1.0)
    sp.add_argument("--z0", type=float, default=0.0)
    sp.add_argument("--rtol", type=float, default=1e-8)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("reduced", help="integrate the eps = 0 reduced flow across charts")
    common(sp, eps=False)
    sp.add_argument("--y0", type=float, default=0.5)
    sp.add_argument("--z0", type=float, default=0.0)
    sp.add_argument("--tmax", type=float, default=200.0)
    sp.add_argument("--rtol", type=float, default=1e-10)
    sp.set_defaults(func=cmd_reduced)

    sp = sub.add_parser("levelset", help="trace a level set of H")
    common(sp, eps=False, alpha=False)
    sp.add_argument("--h", type=float, required=True)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--n-points", type=int, default=2000)
    sp.set_defaults(func=cmd_levelset)

    sp = sub.add_parser("melnikov", help="Melnikov coefficients and alpha_M over an energy grid")
    common(sp, alpha=False, eps_default=1e-3)
    sp.add_argument("--h-grid", default="0.01:0.6:0.01")
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_melnikov)

    sp = sub.add_parser("hopf", help="Hopf point and Lyapunov coefficient")
    common(sp, alpha=False)
    sp.add_argument("--check-supercritical", action="store_true")
    sp.set_defaults(func=cmd_hopf)

    sp = sub.add_parser("gamma0", help="singular cycle on the Poincare sphere")
    common(sp, eps=False)
    sp.add_argument("--seed-offset", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gamma0)

    sp = sub.add_parser("cycle", help="locate a limit cycle of the full system")
    common(sp, eps_default=1e-3)
    sp.add_argument("--guess-y", type=float, default=None, help="section point y (x on the critical manifold)")
    sp.add_argument("--rtol", type=float, default=1e-10)
    sp.add_argument("--chunk-trace", type=float, default=None)
    sp.add_argument("--hausdorff", action="store_true", help="also report the distance to the singular cycle")
    sp.set_defaults(func=cmd_cycle)

    sp = sub.add_parser("bifurcate", help="limit-cycle continuation over a parameter grid")
    sp.add_argument("--xi", type=float, default=0.5)
    sp.add_argument("--xi-list", default=None, help="several branches, run concurrently with --jobs")
    sp.add_argument("--mode", choices=("alpha", "eps"), required=True)
    sp.add_argument("--grid", required=True)
    sp.add_argument("--eps", type=float, default=None)
    sp.add_argument("--alpha", type=float, default=None)
    sp.add_argument("--rtol", type=float, default=1e-10)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_bifurcate)

    sp = sub.add_parser("atlas", help="charts, transitions and fixed points at infinity")
    common(sp, eps=False)
    sp.set_defaults(func=cmd_atlas)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    out = Path(args.out or os.environ.get(OUT_ENV, "springblock_out"))
    config = {k: v for k, v in vars(args).items() if k != "func"}
    t0 = time.time()
    manifest = {"schema": MANIFEST_SCHEMA, "command": args.command, "config": config,
                "versions": {"springblock": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                             "python": platform.python_version()}}
    try:
        out.mkdir(parents=True, exist_ok=True)
        files, summary = args.func(args, out)
        code = 0
        manifest.update(status="ok", outputs=files, summary=summary)
    except (UsageError, DomainError) as exc:
        print(f"springblock {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (SpringBlockError, ArithmeticError, ValueError) as exc:
        print(f"springblock {args.command}: numerical failure: {exc}", file=sys.stderr)
        manifest.update(status="failed", error={"type": type(exc).__name__, "message": str(exc)})
        code = 1
    manifest["wall_time_s"] = time.time() - t0
    _write_json(out / "manifest.json", manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
