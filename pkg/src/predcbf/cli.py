"""Command-line front end: value grids, closed-loop runs, baselines and reports.

Exit codes: 0 success, 2 usage, 3 too many unresolved cells, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, invariance, model, pcbf, safempc, simfilter
from .model import ConfigurationError, UsageError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_UNRESOLVED = 3
EXIT_INVARIANT = 4

DEFAULT_RES = 41
DEFAULT_LEVELS = (0.0, 0.1, 0.3, 1.0, 3.0)
UNRESOLVED_LIMIT = 0.05
NESTING_DELTAS = (0.05, 0.005, 0.0)


class _Parser(argparse.ArgumentParser):
    """Raise on bad arguments so main() owns the exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _load(args):
    if args.spec and args.preset:
        raise UsageError("give either --preset or --spec, not both")
    if args.spec:
        pre = model.load_problem(args.spec)
        source = str(args.spec)
    else:
        pre = model.preset(args.preset or "linear-unstable")
        source = pre.name
    if getattr(args, "horizon", None) is not None:
        if args.horizon < 1:
            raise UsageError("--horizon must be at least 1")
        pre = pre.with_horizon(args.horizon)
    return pre, source


def _grid_ranges(pre, rng):
    if rng is None:
        lo, hi = simfilter.sample_box(safempc.SafeMpcProblem.soft(pre))
        return np.stack([lo, hi], axis=1)
    r = np.asarray(rng, dtype=float)
    if r.size != 2 * pre.system.n:
        raise UsageError(f"--range needs {2 * pre.system.n} numbers (lo hi per axis)")
    r = r.reshape(-1, 2)
    if np.any(r[:, 1] <= r[:, 0]):
        raise UsageError("--range needs lo < hi on every axis")
    return r


def _geometry(ranges, res) -> str:
    r = np.asarray(ranges, dtype=float).reshape(-1, 2)
    return _digest(json.dumps({"ranges": np.round(r, 12).tolist(), "res": list(res)}))


def _jobs(args) -> int:
    if args.jobs is None:
        return pcbf.default_jobs()
    if args.jobs < 1:
        raise UsageError("--jobs must be positive")
    return args.jobs


def _write_manifest(out: Path, command, source, params, files, t0, **extra):
    missing = [f for f in files if not (out / f).is_file() or (out / f).stat().st_size == 0]
    if missing:
        raise RuntimeError(f"output files missing or empty: {missing}")
    man = {"command": command, "problem": source, "parameters": params,
           "output_dir": str(out), "version": __version__, "files": sorted(files),
           "duration_s": round(time.perf_counter() - t0, 3)}
    man.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(man, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return man


def _save_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands


def cmd_grid(args) -> int:
    t0 = time.perf_counter()
    if args.res < 3:
        raise UsageError("--res must be at least 3")
    pre, source = _load(args)
    if pre.system.n != 2:
        raise UsageError("value grids need a two-dimensional state")
    if args.tighten is not None and args.tighten < 0:
        raise UsageError("--tighten must be nonnegative")
    ranges = _grid_ranges(pre, args.range)
    prob = (safempc.SafeMpcProblem.tightened(pre, args.tighten) if args.tighten
            else safempc.SafeMpcProblem.soft(pre))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    grid = pcbf.eval_grid(prob, ranges, args.res, jobs=_jobs(args))
    grid.to_csv(out / "grid.csv")
    zero = pcbf.extract_contour(grid, 0.0)
    zero.save(out / "contour_zero.json")
    _save_json(out / "contours.json", [pcbf.extract_contour(grid, lv).to_json() for lv in args.levels])

    unres = grid.unresolved_fraction()
    params = {"resolution": args.res, "ranges": ranges.tolist(), "horizon": pre.N,
              "tighten": args.tighten or 0.0, "levels": list(args.levels), "jobs": _jobs(args)}
    _write_manifest(out, "grid", source, params, ["grid.csv", "contour_zero.json", "contours.json"],
                    t0, problem_fingerprint=_digest(pre.fingerprint()),
                    variant_fingerprint=_digest(prob.fingerprint()),
                    grid_fingerprint=_geometry(ranges, grid.resolution),
                    zero_cells=int(grid.zero_set().sum()), feasible_cells=int(grid.feasible.sum()),
                    unresolved_fraction=unres)
    if unres > UNRESOLVED_LIMIT:
        print(f"{unres:.1%} of cells unresolved (limit {UNRESOLVED_LIMIT:.0%})", file=sys.stderr)
        return EXIT_UNRESOLVED
    return EXIT_OK


def _run_one(task):
    prob, x0, steps, filt = task
    if filt:
        return simfilter.simulate_filtered(prob, x0, None, steps)
    return simfilter.simulate(prob, x0, steps)


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    if args.samples < 1:
        raise UsageError("--samples must be at least 1")
    if args.steps < 1:
        raise UsageError("--steps must be at least 1")
    pre, source = _load(args)
    prob = (safempc.SafeMpcProblem.tightened(pre, args.tighten) if args.tighten
            else safempc.SafeMpcProblem.soft(pre))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    x0s = simfilter.sample_initial_states(prob, args.samples, args.seed)
    tasks = [(prob, x0, args.steps, args.filter) for x0 in x0s]
    jobs = _jobs(args)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            trajs = list(ex.map(_run_one, tasks))
    else:
        trajs = [_run_one(t) for t in tasks]

    files, records, bad = [], [], 0
    width = max(3, len(str(len(trajs) - 1)))
    for k, (x0, tr) in enumerate(zip(x0s, trajs)):
        name = f"traj_{k:0{width}d}.csv"
        tr.to_csv(out / name)
        files.append(name)
        gaps = tr.decrease_gaps()
        ok = tr.decrease_ok() and tr.dynamics_ok(pre.system)
        bad += not ok
        records.append({"file": name, "x0": x0.tolist(), "reason": tr.reason,
                        "converged_at": tr.converged_at, "steps": tr.steps,
                        "max_decrease_gap": float(gaps.max()) if gaps.size else None,
                        "invariants_ok": bool(ok)})
    params = {"samples": args.samples, "seed": args.seed, "steps": args.steps,
              "filter": bool(args.filter), "horizon": pre.N, "tighten": args.tighten or 0.0,
              "jobs": jobs}
    _write_manifest(out, "simulate", source, params, files, t0, seeds=[args.seed],
                    trajectories=records, problem_fingerprint=_digest(pre.fingerprint()))
    if bad:
        print(f"{bad} trajectories violate the decrease or dynamics invariant", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_baseline(args) -> int:
    t0 = time.perf_counter()
    pre, source = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"problem_fingerprint": _digest(pre.fingerprint())}
    params = {"method": args.method, "horizon": pre.N}

    if args.method == "polytope":
        if pre.system.kind != "linear":
            raise UsageError("the polytope baseline needs a linear system; "
                             "use --method kernel for nonlinear presets")
        if pre.Kf is None:
            raise UsageError("the polytope baseline needs the terminal gain Kf")
        K = pre.Kf
        Acl = pre.system.A + pre.system.B @ K
        C = invariance.lqr_constraint_set(pre.X, pre.U, K)
        omega, iters = invariance.max_invariant_polytope(Acl, C, return_iterations=True)
        invariance.polytope_to_json(omega, out / "mpi_polytope.json")
        files = ["mpi_polytope.json"]
        extra.update(iterations=iters, rows=omega.nrows,
                     invariance_gap=invariance.invariance_gap(Acl, omega),
                     contains_terminal_set=bool(pre.Xf.inside(omega)))
    elif args.method == "kernel":
        if args.res < 3:
            raise UsageError("--res must be at least 3")
        ranges = _grid_ranges(pre, args.range)
        ker = invariance.viability_kernel_grid(pre.system, pre.X, pre.U, args.res,
                                               args.input_samples, ranges, args.kernel_mode)
        ker.to_csv(out / "kernel.csv")
        files = ["kernel.csv"]
        params.update(resolution=args.res, ranges=ranges.tolist(), input_samples=args.input_samples,
                      kernel_mode=args.kernel_mode)
        extra.update(grid_fingerprint=_geometry(ranges, ker.resolution), sweeps=ker.sweeps,
                     kernel_cells=int(ker.member.sum()), kernel_area=ker.area())
    else:
        ranges = _grid_ranges(pre, args.range)
        res = max(args.res, 3)
        con = pcbf.handcrafted_contour(ranges, res, args.a, args.b)
        con.save(out / "handcrafted_contour.json")
        files = ["handcrafted_contour.json"]
        params.update(resolution=res, ranges=ranges.tolist(), a=args.a, b=args.b)
        extra.update(polylines=len(con.polylines), closed=con.closed)
    _write_manifest(out, "baseline", source, params, files, t0, **extra)
    return EXIT_OK


def _read_manifest(d: Path):
    try:
        with open(d / "manifest.json") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"{d} has no manifest.json") from None


def cmd_compare(args) -> int:
    gdirs = [Path(g) for g in args.grid]
    mans = [_read_manifest(d) for d in gdirs]
    if any(m["command"] != "grid" for m in mans):
        raise UsageError("--grid directories must come from the grid command")
    geo = {m["grid_fingerprint"] for m in mans}
    prob = {m["problem_fingerprint"] for m in mans}
    base = None
    if args.baseline:
        bdir = Path(args.baseline)
        base = _read_manifest(bdir)
        if base.get("parameters", {}).get("method") != "kernel":
            raise UsageError("--baseline must be a kernel baseline directory")
        geo.add(base["grid_fingerprint"])
        prob.add(base["problem_fingerprint"])
    if len(geo) != 1:
        raise UsageError("grid fingerprints differ; rerun with the same --range and --res")
    if len(prob) != 1:
        raise UsageError("the runs were made for different problems")

    grids = [pcbf.ValueGrid.from_csv(d / "grid.csv") for d in gdirs]
    deltas = [float(m["parameters"]["tighten"]) for m in mans]
    zs = [g.zero_set() for g in grids]
    area = [float(z.sum() * g.cell_area()) for z, g in zip(zs, grids)]
    report = {"grids": [{"dir": str(d), "tighten": dl, "zero_cells": int(z.sum()), "zero_area": a}
                        for d, dl, z, a in zip(gdirs, deltas, zs, area)]}

    if base is not None:
        ker = invariance.GridKernel.from_csv(bdir / "kernel.csv")
        karea = ker.area()
        report["baseline"] = {"dir": str(bdir), "kernel_cells": int(ker.member.sum()),
                              "kernel_area": karea}
        report["area_ratio"] = {str(dl): (a / karea if karea > 0 else None)
                                for dl, a in zip(deltas, area)}
        report["inside_baseline"] = {str(dl): bool(np.all(ker.member[z]))
                                     for dl, z in zip(deltas, zs)}

    # nesting along decreasing tightening: larger delta gives the smaller set
    order = np.argsort(deltas)[::-1]
    nest = []
    for i, j in zip(order[:-1], order[1:]):
        nest.append({"inner": deltas[i], "outer": deltas[j],
                     "nested": bool(np.all(zs[j][zs[i]])),
                     "area_ratio": area[i] / area[j] if area[j] > 0 else None})
    report["nesting"] = nest
    report["nesting_deltas_present"] = sorted(set(deltas) & set(NESTING_DELTAS), reverse=True)

    cons = {dl: pcbf.ContourSet.from_json(json.load(open(d / "contour_zero.json")))
            for d, dl in zip(gdirs, deltas)}
    haus = []
    for a_i in range(len(deltas)):
        for b_i in range(a_i + 1, len(deltas)):
            ca, cb = cons[deltas[a_i]], cons[deltas[b_i]]
            h = pcbf.hausdorff(ca, cb) if len(ca.points()) and len(cb.points()) else None
            haus.append({"a": deltas[a_i], "b": deltas[b_i], "hausdorff": h})
    report["hausdorff"] = haus

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_json(out / "report.json", report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(p):
    p.add_argument("--preset", choices=model.PRESETS, help="built-in problem (default linear-unstable)")
    p.add_argument("--spec", help="JSON problem spec instead of a preset")
    p.add_argument("--horizon", type=int, help="override the horizon N")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--jobs", type=int, help="worker processes (default: $PCBF_JOBS or 1)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="predcbf", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"predcbf {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("grid", help="sample V on a grid and extract level contours")
    _common(g)
    g.add_argument("--res", type=int, default=DEFAULT_RES,
                   help="cells per axis (default 41 for tests; use 101 for figures)")
    g.add_argument("--range", type=float, nargs="+", metavar="V",
                   help="lo hi per axis (default: 1.2 x bounding box of X)")
    g.add_argument("--tighten", type=float, help="tightening step delta, Delta_i = i*delta")
    g.add_argument("--levels", type=float, nargs="+", default=list(DEFAULT_LEVELS),
                   help="contour levels; 0 means the 1e-5 zero threshold")
    g.set_defaults(func=cmd_grid)

    s = sub.add_parser("simulate", help="closed-loop recovery runs from sampled states")
    _common(s)
    s.add_argument("--samples", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--filter", action="store_true",
                   help="two-stage safety filter around u = Kf x")
    s.add_argument("--tighten", type=float)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("baseline", help="invariant-set baselines")
    _common(b)
    b.add_argument("--method", choices=("polytope", "kernel", "handcrafted-cbf"), required=True)
    b.add_argument("--res", type=int, default=DEFAULT_RES, help="cells per axis (default 41)")
    b.add_argument("--range", type=float, nargs="+", metavar="V")
    b.add_argument("--input-samples", type=int, default=61)
    b.add_argument("--kernel-mode", choices=("outer", "center"), default="outer",
                   help="outer: over-approximating cell enclosure; center: cell-centre dynamics")
    b.add_argument("--a", type=float, default=pcbf.HANDCRAFTED_A)
    b.add_argument("--b", type=float, default=pcbf.HANDCRAFTED_B)
    b.set_defaults(func=cmd_baseline)

    c = sub.add_parser("compare", help="area ratios, nesting and Hausdorff distances")
    c.add_argument("--grid", nargs="+", required=True, help="grid output directories")
    c.add_argument("--baseline", help="kernel baseline output directory")
    c.add_argument("--out", default=".")
    c.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"predcbf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"predcbf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
