"""Terminal-set synthesis and invariant-set baselines."""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._jit import USE_NUMBA, jit
from .model import Polytope, SystemModel

DARE_TOL = 1e-12
DARE_MAX_ITER = 100_000
MPI_MAX_ITER = 100
LP_TOL = 1e-9


class StabilizabilityError(RuntimeError):
    pass


class EmptyInteriorError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, last=None, iterations=0):
        super().__init__(msg)
        self.last = last
        self.iterations = iterations


@dataclass(frozen=True)
class LqrResult:
    K: np.ndarray
    P: np.ndarray
    iterations: int

    def closed_loop(self, A, B):
        return np.asarray(A) + np.asarray(B) @ self.K


def _mat(a):
    return np.atleast_2d(np.asarray(a, dtype=float))


def dare(A, B, Q, R, tol=DARE_TOL, max_iter=DARE_MAX_ITER) -> LqrResult:
    """Riccati fixed-point iteration from P0 = Q; gain convention u = Kx."""
    A, B, Q, R = _mat(A), _mat(B), _mat(Q), _mat(R)
    if B.shape[0] != A.shape[0]:
        B = B.T
    P = Q.copy()
    for it in range(1, max_iter + 1):
        BtP = B.T @ P
        S = R + BtP @ B
        with np.errstate(over="ignore", invalid="ignore"):
            Pn = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(S, BtP @ A)
        Pn = 0.5 * (Pn + Pn.T)
        if not np.all(np.isfinite(Pn)):
            break
        if np.abs(Pn - P).max() <= tol:
            P = Pn
            K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            return LqrResult(K, P, it)
        P = Pn
    raise StabilizabilityError(f"Riccati iteration did not converge in {max_iter} steps; "
                               "(A, B) is likely not stabilizable")


def dare_residual(A, B, Q, R, P) -> float:
    A, B, Q, R, P = map(_mat, (A, B, Q, R, P))
    rhs = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return float(np.abs(P - rhs).max())


def max_alpha(P, K, X: Polytope, U: Optional[Polytope] = None) -> float:
    """Largest alpha with {x'Px <= alpha} inside X and K{...} inside U."""
    P = _mat(P)
    rows, rhs = [X.G], [X.g]
    if U is not None and U.nrows:
        rows.append(U.G @ _mat(K))
        rhs.append(U.g)
    Ga = np.vstack(rows)
    b = np.concatenate(rhs)
    if np.any(b < 0):
        raise EmptyInteriorError("a constraint excludes the origin; no ellipsoid fits")
    s = np.einsum("ij,jk,ik->i", Ga, np.linalg.inv(P), Ga)
    keep = s > 0
    if not np.any(keep):
        return np.inf
    return float(np.min(b[keep] ** 2 / s[keep]))


def lyapunov_margin(Acl, P) -> float:
    """Minimum eigenvalue of P - Acl' P Acl (>= 0 certifies invariance)."""
    Acl, P = _mat(Acl), _mat(P)
    M = P - Acl.T @ P @ Acl
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())


def _same(a: Polytope, b: Polytope, tol=LP_TOL) -> bool:
    return a.subset_of(b, tol) and b.subset_of(a, tol)


def max_invariant_polytope(Acl, C: Polytope, max_iter=MPI_MAX_ITER, return_iterations=False):
    """Maximal positively invariant subset of C for x+ = Acl x."""
    Acl = _mat(Acl)
    omega = C.reduce()
    for k in range(1, max_iter + 1):
        nxt = Polytope(np.vstack([omega.G, omega.G @ Acl]),
                       np.concatenate([omega.g, omega.g])).reduce()
        if _same(nxt, omega):
            return (nxt, k) if return_iterations else nxt
        omega = nxt
    raise NonConvergenceError(f"no fixed point within {max_iter} iterations", omega, max_iter)


def invariance_gap(Acl, omega: Polytope) -> float:
    """max over rows of sup_{x in omega} G_i Acl x - g_i; <= 0 means invariant."""
    Acl = _mat(Acl)
    return max(omega.support(a @ Acl) - b for a, b in zip(omega.G, omega.g))


def lqr_constraint_set(X: Polytope, U: Polytope, K) -> Polytope:
    """C = X ∩ {x : Kx ∈ U}."""
    return X.intersect(Polytope(U.G @ _mat(K), U.g))


# ---------------------------------------------------------------------------
# grid viability kernel


@dataclass
class GridKernel:
    lo: np.ndarray
    hi: np.ndarray
    resolution: tuple
    member: np.ndarray
    inputs: np.ndarray
    sweeps: int
    mode: str

    @property
    def cell_size(self) -> np.ndarray:
        return (self.hi - self.lo) / np.asarray(self.resolution)

    def axes(self):
        h = self.cell_size
        return [self.lo[j] + (np.arange(r) + 0.5) * h[j] for j, r in enumerate(self.resolution)]

    def centers(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def cell_index(self, pts):
        """Integer cell indices of points, -1 where outside the grid."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        idx = np.floor((pts - self.lo) / self.cell_size).astype(np.int64)
        out = np.any((idx < 0) | (idx >= np.asarray(self.resolution)), axis=1)
        idx[out] = -1
        return idx

    def contains(self, pts):
        idx = self.cell_index(pts)
        ok = np.all(idx >= 0, axis=1)
        res = np.zeros(len(idx), dtype=bool)
        res[ok] = self.member[tuple(idx[ok].T)]
        return res

    def area(self) -> float:
        return float(self.member.sum() * np.prod(self.cell_size))

    def to_csv(self, path):
        c = self.centers()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j + 1}" for j in range(c.shape[1])] + ["member"])
            for row, mbr in zip(c, self.member.ravel()):
                w.writerow([f"{v:.10g}" for v in row] + [int(mbr)])

    @classmethod
    def from_csv(cls, path, mode=""):
        body = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = body.shape[1] - 1
        axes = [np.unique(body[:, j]) for j in range(n)]
        res = tuple(len(a) for a in axes)
        h = np.array([(a[1] - a[0]) if len(a) > 1 else 1.0 for a in axes])
        lo = np.array([a[0] for a in axes]) - h / 2
        hi = np.array([a[-1] for a in axes]) + h / 2
        member = body[:, n].astype(bool).reshape(res)
        return cls(lo, hi, res, member, np.zeros((0, 0)), 0, mode)


@jit
def _sweep_boxes_2d(alive, box, max_sweeps):
    """Fixed point of: cell alive iff some input's image box meets an alive cell.

    box[c, j] = (lo1, hi1, lo2, hi2) in cell indices, lo1 > hi1 for empty.
    """
    r1, r2 = alive.shape
    nin = box.shape[1]
    sat = np.zeros((r1 + 1, r2 + 1), dtype=np.int64)
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        for i in range(r1):
            acc = 0
            for j in range(r2):
                acc += alive[i, j]
                sat[i + 1, j + 1] = sat[i, j + 1] + acc
        nxt = alive.copy()
        changed = False
        for i in range(r1):
            for j in range(r2):
                if not alive[i, j]:
                    continue
                c = i * r2 + j
                ok = False
                for k in range(nin):
                    a1 = box[c, k, 0]
                    b1 = box[c, k, 1]
                    a2 = box[c, k, 2]
                    b2 = box[c, k, 3]
                    if a1 > b1 or a2 > b2:
                        continue
                    cnt = sat[b1 + 1, b2 + 1] - sat[a1, b2 + 1] - sat[b1 + 1, a2] + sat[a1, a2]
                    if cnt > 0:
                        ok = True
                        break
                if not ok:
                    nxt[i, j] = False
                    changed = True
        alive[:, :] = nxt
        if not changed:
            break
    return sweeps


def _sweep_boxes_numpy(alive, box, max_sweeps):
    """Vectorized n-D version of the sweep; box has shape (cells, inputs, n, 2)."""
    res = alive.shape
    n = len(res)
    flat = alive.ravel()
    lo = box[..., 0]
    hi = box[..., 1]
    empty = np.any(lo > hi, axis=-1)
    lo_c = np.clip(lo, 0, np.asarray(res) - 1)
    hi_c = np.clip(hi, 0, np.asarray(res) - 1)
    corners = list(itertools.product((0, 1), repeat=n))
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        sat = alive.astype(np.int64)
        for ax in range(n):
            sat = np.cumsum(sat, axis=ax)
        sat = np.pad(sat, [(1, 0)] * n)
        cnt = np.zeros(lo.shape[:2], dtype=np.int64)
        for cr in corners:
            idx = tuple(np.where(cr[ax], hi_c[..., ax] + 1, lo_c[..., ax]) for ax in range(n))
            sign = (-1) ** (n - sum(cr))
            cnt += sign * sat[idx]
        ok = np.any((cnt > 0) & ~empty, axis=1)
        nxt = flat & ok
        changed = bool(np.any(nxt != flat))
        flat = nxt
        alive = flat.reshape(res)
        if not changed:
            break
    return alive, sweeps


def _image_boxes(model, centers, half, inputs, uhalf, lo, h, res, mode):
    """Cell-index boxes of the image of every (cell, input) pair."""
    nc, n = centers.shape
    X = np.repeat(centers, len(inputs), axis=0)
    U = np.tile(inputs, (nc, 1))
    img = model.step(X, U)
    if mode == "center":
        rad = np.zeros_like(img)
    else:
        # mean-value enclosure over the cell and the input interval around each sample
        if model.kind == "linear":
            JA, JB = np.abs(model.A), np.abs(model.B)
            rad = np.broadcast_to(JA @ half + JB @ uhalf, img.shape)
        else:
            JA = np.zeros((len(X), n, n))
            JB = np.zeros((len(X), n, model.m))
            for sgn in itertools.product((-1.0, 0.0, 1.0), repeat=n):
                Ad, Bd = model.jacobians(X + np.asarray(sgn) * half, U)
                JA = np.maximum(JA, np.abs(Ad))
                JB = np.maximum(JB, np.abs(Bd))
            rad = 1.01 * (JA @ half + JB @ uhalf)
    a = np.floor((img - rad - lo) / h).astype(np.int64)
    b = np.floor((img + rad - lo) / h).astype(np.int64)
    if mode == "center":
        b = a.copy()
    resv = np.asarray(res)
    empty = np.any((b < 0) | (a >= resv), axis=1)
    a = np.clip(a, 0, resv - 1)
    b = np.clip(b, 0, resv - 1)
    a[empty] = 1
    b[empty] = 0
    box = np.stack([a, b], axis=-1).reshape(nc, len(inputs), n, 2)
    return box


def viability_kernel_grid(model: SystemModel, X: Polytope, U: Polytope, resolution=201,
                          input_samples=61, ranges=None, mode="center",
                          max_sweeps=100_000) -> GridKernel:
    """Grid viability kernel of X under inputs sampled uniformly from U's bounding box.

    mode="center" follows cell centres (point dynamics).  mode="outer" keeps a
    cell while the enclosure of its image over the cell and the neighbouring
    input interval meets a surviving cell; this over-approximates the true
    kernel, so every viable state lies in a kept cell.
    """
    n = model.n
    if ranges is None:
        lo = np.array([-Polytope(X.G, X.g).support(-e) for e in np.eye(n)])
        hi = np.array([X.support(e) for e in np.eye(n)])
    else:
        r = np.asarray(ranges, dtype=float).reshape(n, 2)
        lo, hi = r[:, 0], r[:, 1]
    res = tuple(np.broadcast_to(np.asarray(resolution, dtype=np.int64), (n,)).tolist())
    h = (hi - lo) / np.asarray(res)
    ulo = np.array([-U.support(-e) for e in np.eye(model.m)])
    uhi = np.array([U.support(e) for e in np.eye(model.m)])
    ns = int(input_samples)
    if ns < 1:
        raise ValueError("need at least one input sample")
    grids = [np.linspace(ulo[j], uhi[j], ns) if ns > 1 else np.array([(ulo[j] + uhi[j]) / 2])
             for j in range(model.m)]
    inputs = np.stack([g.ravel() for g in np.meshgrid(*grids, indexing="ij")], axis=1)
    inputs = inputs[U.contains(inputs, 1e-12)]
    uhalf = (uhi - ulo) / (2 * max(ns - 1, 1)) if ns > 1 else (uhi - ulo) / 2

    axes = [lo[j] + (np.arange(res[j]) + 0.5) * h[j] for j in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    if mode == "center":
        alive = X.contains(centers, 1e-12)
    elif mode == "outer":
        # cells meeting X: X's rows evaluated at the best corner of each cell
        slack = X.residual(centers) - np.abs(X.G) @ (h / 2)
        alive = np.all(slack <= 1e-12, axis=1)
    else:
        raise ValueError(f"unknown kernel mode {mode!r}")
    alive = alive.reshape(res)
    box = _image_boxes(model, centers, h / 2, inputs, uhalf, lo, h, res, mode)

    if USE_NUMBA and n == 2:
        alive = alive.copy()
        b2 = np.ascontiguousarray(box.reshape(box.shape[0], box.shape[1], 4))
        sweeps = _sweep_boxes_2d(alive, b2, max_sweeps)
    else:
        alive, sweeps = _sweep_boxes_numpy(alive, box, max_sweeps)
    return GridKernel(lo, hi, res, np.asarray(alive, dtype=bool), inputs, int(sweeps), mode)


def polytope_to_json(poly: Polytope, path):
    with open(path, "w") as fh:
        json.dump(poly.to_json(), fh, indent=1)
