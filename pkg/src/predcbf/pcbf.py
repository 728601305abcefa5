"""Value-function grids, level-set extraction and barrier-function checks."""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from . import safempc
from ._jit import jit
from .safempc import EPS_ZERO, SafeMpcProblem

INF_SURROGATE = 1e6
CBF_TOL = 1e-5

# handcrafted barrier of the pendulum comparison: h(x) = 1 - x1²/a² - x2²/b² - x1 x2/(ab)
HANDCRAFTED_A = 0.046
HANDCRAFTED_B = 0.06


# ---------------------------------------------------------------------------
# grids


@dataclass
class ValueGrid:
    """V sampled at cell centres; arrays are indexed [i1, i2] (x1 first)."""

    lo: np.ndarray
    hi: np.ndarray
    resolution: tuple
    values: np.ndarray
    feasible: np.ndarray
    unresolved: np.ndarray
    fingerprint: str = ""

    @property
    def cell_size(self) -> np.ndarray:
        return (self.hi - self.lo) / np.asarray(self.resolution)

    def axes(self):
        return cell_axes(self.lo, self.hi, self.resolution)

    def centers(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def zero_set(self, eps=EPS_ZERO) -> np.ndarray:
        return self.feasible & (self.values <= eps)

    def unresolved_fraction(self) -> float:
        return float(self.unresolved.mean())

    def cell_area(self) -> float:
        return float(np.prod(self.cell_size))

    def contour_field(self) -> np.ndarray:
        """Values with infeasible and unresolved cells replaced by a large number."""
        f = np.where(self.feasible, self.values, INF_SURROGATE)
        return np.asarray(f, dtype=float)

    def value_at(self, pts) -> np.ndarray:
        """Value of the cell containing each point; inf outside the grid."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        idx = np.floor((pts - self.lo) / self.cell_size).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < np.asarray(self.resolution)), axis=1)
        out = np.full(len(pts), np.inf)
        f = np.where(self.feasible, self.values, np.inf)
        out[ok] = f[tuple(idx[ok].T)]
        return out

    @classmethod
    def from_function(cls, fn, ranges, resolution, fingerprint="function"):
        lo, hi, res = _ranges(ranges, resolution)
        mesh = np.meshgrid(*cell_axes(lo, hi, res), indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = np.asarray([fn(p) for p in pts], dtype=float).reshape(res)
        return cls(lo, hi, res, vals, np.isfinite(vals), np.zeros(res, dtype=bool), fingerprint)

    def to_csv(self, path):
        c = self.centers()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j + 1}" for j in range(c.shape[1])] + ["V", "feasible"])
            for row, v, ok, un in zip(c, self.values.ravel(), self.feasible.ravel(),
                                      self.unresolved.ravel()):
                val = f"{v:.12g}" if ok else ("nan" if un else "inf")
                w.writerow([f"{a:.10g}" for a in row] + [val, int(ok)])

    @classmethod
    def from_csv(cls, path, fingerprint=""):
        with open(path) as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], np.array(rows[1:], dtype=object)
        n = len(head) - 2
        pts = body[:, :n].astype(float)
        axes = [np.unique(pts[:, j]) for j in range(n)]
        res = tuple(len(a) for a in axes)
        h = np.array([(a[1] - a[0]) if len(a) > 1 else 1.0 for a in axes])
        lo = np.array([a[0] for a in axes]) - h / 2
        hi = np.array([a[-1] for a in axes]) + h / 2
        vals = np.array([float(v) for v in body[:, n]]).reshape(res)
        feas = body[:, n + 1].astype(int).astype(bool).reshape(res)
        return cls(lo, hi, res, vals, feas, np.isnan(vals), fingerprint)


def cell_axes(lo, hi, res):
    h = (np.asarray(hi) - np.asarray(lo)) / np.asarray(res)
    return [lo[j] + (np.arange(res[j]) + 0.5) * h[j] for j in range(len(res))]


def _ranges(ranges, resolution):
    r = np.asarray(ranges, dtype=float).reshape(-1, 2)
    lo, hi = r[:, 0], r[:, 1]
    if np.any(hi <= lo):
        raise ValueError("each range needs lo < hi")
    res = tuple(np.broadcast_to(np.asarray(resolution, dtype=np.int64), (len(lo),)).tolist())
    if min(res) < 1:
        raise ValueError("resolution must be positive")
    return lo, hi, res


def _eval_points(problem: SafeMpcProblem, pts):
    out = np.empty((len(pts), 2))
    for k, p in enumerate(pts):
        sol = safempc.solve(problem, p)
        if sol.optimal:
            out[k] = (sol.V, 0)
        elif sol.status == "infeasible":
            out[k] = (np.inf, 1)
        else:
            out[k] = (np.nan, 2)
    return out


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("PCBF_JOBS", "1")))
    except ValueError:
        return 1


def eval_points(problem: SafeMpcProblem, pts, jobs=None) -> np.ndarray:
    """(V, code) per point with code 0 optimal, 1 infeasible, 2 unresolved."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    if jobs == 1 or len(pts) < 2 * jobs:
        return _eval_points(problem, pts)
    chunks = np.array_split(pts, 4 * jobs)
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        parts = list(ex.map(_eval_points, [problem] * len(chunks), chunks))
    return np.vstack(parts)


def eval_grid(problem: SafeMpcProblem, ranges, resolution, jobs=None) -> ValueGrid:
    """Solve the MPC at every cell centre (cold start, so cells are independent)."""
    lo, hi, res = _ranges(ranges, resolution)
    mesh = np.meshgrid(*cell_axes(lo, hi, res), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    out = eval_points(problem, pts, jobs)
    vals = out[:, 0].reshape(res)
    code = out[:, 1].reshape(res)
    return ValueGrid(lo, hi, res, vals, code == 0, code == 2, problem.fingerprint())


# ---------------------------------------------------------------------------
# marching squares


@dataclass
class ContourSet:
    level: float
    polylines: list = field(default_factory=list)
    closed: list = field(default_factory=list)

    def points(self) -> np.ndarray:
        if not self.polylines:
            return np.zeros((0, 2))
        return np.vstack(self.polylines)

    def to_json(self) -> dict:
        return {"level": float(self.level),
                "polylines": [np.round(p, 12).tolist() for p in self.polylines],
                "closed": [bool(c) for c in self.closed]}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def from_json(cls, obj) -> "ContourSet":
        return cls(obj["level"], [np.asarray(p, dtype=float) for p in obj["polylines"]],
                   list(obj["closed"]))


@jit
def _march(f, level):
    """Oriented segments as (from_edge, to_edge) ids plus edge points.

    Horizontal edge (i,j)-(i+1,j) has id i*r2 + j; vertical edge
    (i,j)-(i,j+1) has id r1*r2 + i*r2 + j.  Segments keep the sublevel
    region {f <= level} on their left.
    """
    r1, r2 = f.shape
    ne = 2 * r1 * r2
    ex = np.full(ne, np.nan)
    ey = np.full(ne, np.nan)
    seg = np.empty((4 * r1 * r2, 2), dtype=np.int64)
    ns = 0
    edges = np.empty(4, dtype=np.int64)
    cross = np.empty(4, dtype=np.int64)
    for i in range(r1 - 1):
        for j in range(r2 - 1):
            v0 = f[i, j]
            v1 = f[i + 1, j]
            v2 = f[i + 1, j + 1]
            v3 = f[i, j + 1]
            vals = (v0, v1, v2, v3)
            ins = (v0 <= level, v1 <= level, v2 <= level, v3 <= level)
            # counterclockwise edges: bottom, right, top, left
            edges[0] = i * r2 + j
            edges[1] = r1 * r2 + (i + 1) * r2 + j
            edges[2] = i * r2 + j + 1
            edges[3] = r1 * r2 + i * r2 + j
            nc = 0
            for k in range(4):
                a = ins[k]
                b = ins[(k + 1) % 4]
                if a != b:
                    cross[nc] = k
                    nc += 1
                    e = edges[k]
                    if np.isnan(ex[e]):
                        # interpolate from the lower-index corner so shared edges agree
                        if k == 0 or k == 1:
                            fa, fb = vals[k], vals[k + 1]
                        elif k == 2:
                            fa, fb = vals[3], vals[2]
                        else:
                            fa, fb = vals[0], vals[3]
                        t = (level - fa) / (fb - fa)
                        if k == 0:
                            ex[e] = i + t
                            ey[e] = j
                        elif k == 1:
                            ex[e] = i + 1
                            ey[e] = j + t
                        elif k == 2:
                            ex[e] = i + t
                            ey[e] = j + 1
                        else:
                            ex[e] = i
                            ey[e] = j + t
            if nc == 0:
                continue
            if nc == 2:
                s, e2 = cross[0], cross[1]
                if not ins[s]:
                    s, e2 = e2, s
                seg[ns, 0] = edges[s]
                seg[ns, 1] = edges[e2]
                ns += 1
                continue
            # saddle: decide by the centre average
            centre_in = 0.25 * (v0 + v1 + v2 + v3) <= level
            for q in range(4):
                k = cross[q]
                if not ins[k]:
                    continue
                # edge k leaves the sublevel set (start edge)
                if centre_in:
                    nxt = cross[(q + 1) % 4]
                else:
                    nxt = cross[(q + 3) % 4]
                seg[ns, 0] = edges[k]
                seg[ns, 1] = edges[nxt]
                ns += 1
    return seg[:ns], ex, ey


def _stitch(seg):
    nxt = {int(a): int(b) for a, b in seg}
    ends = set(nxt.values())
    chains = []
    used = set()
    # open chains start on an edge nobody ends on
    starts = sorted(a for a in nxt if a not in ends)
    for a in starts + sorted(nxt):
        if a in used:
            continue
        chain = [a]
        used.add(a)
        cur = a
        closed = False
        while cur in nxt:
            b = nxt[cur]
            if b == a:
                closed = True
                chain.append(b)
                break
            if b in used:
                chain.append(b)
                break
            chain.append(b)
            used.add(b)
            cur = b
        chains.append((chain, closed))
    return chains


def extract_contour(grid: ValueGrid, level: float, eps0=EPS_ZERO) -> ContourSet:
    """Marching squares over cell centres; level 0 is read as ``eps0``."""
    if len(grid.resolution) != 2:
        raise ValueError("contours need a 2-D grid")
    if not np.isfinite(level) or level < 0:
        raise ValueError("level must be finite and nonnegative")
    lev = eps0 if level == 0 else float(level)
    f = np.ascontiguousarray(grid.contour_field())
    seg, ex, ey = _march(f, lev)
    axes = grid.axes()
    h = grid.cell_size
    polys, closed = [], []
    for chain, cl in _stitch(seg):
        ids = np.asarray(chain)
        p = np.stack([axes[0][0] + ex[ids] * h[0], axes[1][0] + ey[ids] * h[1]], axis=1)
        polys.append(p)
        closed.append(cl)
    return ContourSet(float(level), polys, closed)


def signed_area(poly) -> float:
    p = np.asarray(poly)
    return 0.5 * float(np.sum(p[:-1, 0] * p[1:, 1] - p[1:, 0] * p[:-1, 1]))


def hausdorff(a: ContourSet, b: ContourSet) -> float:
    pa, pb = a.points(), b.points()
    if len(pa) == 0 or len(pb) == 0:
        return np.inf if len(pa) != len(pb) else 0.0
    return max(directed_hausdorff(pa, pb)[0], directed_hausdorff(pb, pa)[0])


# ---------------------------------------------------------------------------
# barrier checks


@dataclass
class CbfReport:
    points: np.ndarray
    V: np.ndarray
    V_next: np.ndarray
    xi0: np.ndarray
    in_domain: np.ndarray
    tol: float

    @property
    def increase(self) -> np.ndarray:
        return self.V_next - self.V

    @property
    def max_violation(self) -> float:
        d = self.increase[self.in_domain]
        return float(d.max()) if d.size else -np.inf

    @property
    def witness(self):
        if not np.any(self.in_domain):
            return None
        k = np.flatnonzero(self.in_domain)[np.argmax(self.increase[self.in_domain])]
        return self.points[k]

    @property
    def ok(self) -> bool:
        return bool(self.max_violation <= self.tol)

    def summary(self) -> dict:
        w = self.witness
        return {"points": int(len(self.points)), "in_domain": int(self.in_domain.sum()),
                "max_violation": self.max_violation, "tol": self.tol,
                "witness": None if w is None else [float(v) for v in w], "ok": self.ok}


def check_cbf(problem: SafeMpcProblem, points, tol=CBF_TOL) -> CbfReport:
    """Evaluate V(f(x, u0(x))) - V(x) at each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    model = problem.preset.system
    V = np.full(len(pts), np.inf)
    Vn = np.full(len(pts), np.inf)
    xi0 = np.full(len(pts), np.nan)
    dom = np.zeros(len(pts), dtype=bool)
    for k, x in enumerate(pts):
        sol = safempc.solve(problem, x)
        if not sol.optimal:
            continue
        V[k], xi0[k] = sol.V, sol.xi0
        xn = model.step(x, sol.u0)
        # the shifted candidate keeps the SQP on the branch that certifies the decrease
        init = safempc.shifted_candidate(problem, sol) if model.kind != "linear" else None
        nxt = safempc.solve(problem, xn, init=init)
        if nxt.optimal:
            Vn[k] = nxt.V
            dom[k] = True
    return CbfReport(pts, V, Vn, xi0, dom, tol)


# ---------------------------------------------------------------------------
# handcrafted comparison barrier


def handcrafted_h(x, a=HANDCRAFTED_A, b=HANDCRAFTED_B):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return 1.0 - x1 ** 2 / a ** 2 - x2 ** 2 / b ** 2 - x1 * x2 / (a * b)


def handcrafted_contour(ranges, resolution=201, a=HANDCRAFTED_A, b=HANDCRAFTED_B) -> ContourSet:
    """Zero contour of h, oriented counterclockwise around {h >= 0}."""
    lo, hi, res = _ranges(ranges, resolution)
    mesh = np.meshgrid(*cell_axes(lo, hi, res), indexing="ij")
    vals = -handcrafted_h(np.stack(mesh, axis=-1), a, b)
    grid = ValueGrid(lo, hi, res, vals, np.ones(res, dtype=bool), np.zeros(res, dtype=bool),
                     f"handcrafted:{a}:{b}")
    out = extract_contour(grid, 0.0, eps0=0.0)
    return out
