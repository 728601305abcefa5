"""Small dense convex solver for LP/QP/SOCP programs built by this package."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _ipm

__all__ = [
    "SocBlock",
    "ConicProgram",
    "ConicSolution",
    "ConicError",
    "solve",
    "solve_lp_feasibility",
    "dump",
]

DEFAULT_MAX_ITER = 200
EPS_ABS = 1e-10
EPS_REL = 1e-10
EPS_INFEAS = 1e-7
STATIC_REG = 1e-10

_STATUS = {
    _ipm.OPTIMAL: "optimal",
    _ipm.ALMOST_OPTIMAL: "optimal",
    _ipm.PRIMAL_INFEASIBLE: "infeasible",
    _ipm.DUAL_INFEASIBLE: "unbounded",
    _ipm.MAX_ITER: "max-iter",
    _ipm.NUMERICAL: "max-iter",
}


class ConicError(ValueError):
    """Raised for malformed programs."""


@dataclass(frozen=True)
class SocBlock:
    """Second-order cone constraint ``||F z + d||_2 <= r'z + s``."""

    F: np.ndarray
    d: np.ndarray
    r: np.ndarray
    s: float = 0.0


def _as2d(a, ncols):
    if a is None:
        return np.zeros((0, ncols))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, ncols))
    return a


def _as1d(a):
    if a is None:
        return np.zeros(0)
    return np.atleast_1d(np.asarray(a, dtype=float)).ravel()


@dataclass(frozen=True)
class ConicProgram:
    """minimize q'z + 0.5 z'Qz  s.t.  A_eq z = b_eq, A_in z <= b_in, SOC blocks."""

    q: np.ndarray
    Q: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None
    soc_blocks: tuple = ()

    def __post_init__(self):
        q = _as1d(self.q)
        n = q.size
        object.__setattr__(self, "q", q)
        Q = None if self.Q is None else np.asarray(self.Q, dtype=float).reshape(n, n)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "A_eq", _as2d(self.A_eq, n))
        object.__setattr__(self, "b_eq", _as1d(self.b_eq))
        object.__setattr__(self, "A_in", _as2d(self.A_in, n))
        object.__setattr__(self, "b_in", _as1d(self.b_in))
        object.__setattr__(self, "soc_blocks", tuple(self.soc_blocks))
        self.validate()

    @property
    def n(self) -> int:
        return self.q.size

    def validate(self):
        n = self.n
        for name, A, b in (("eq", self.A_eq, self.b_eq), ("in", self.A_in, self.b_in)):
            if A.shape[1] != n or A.shape[0] != b.size:
                raise ConicError(f"A_{name} is {A.shape}, b_{name} has {b.size} entries, n={n}")
        if self.Q is not None:
            if not np.allclose(self.Q, self.Q.T, atol=1e-12):
                raise ConicError("Q must be symmetric")
            if n and np.linalg.eigvalsh(self.Q).min() < -1e-9:
                raise ConicError("Q must be positive semidefinite")
        for blk in self.soc_blocks:
            F = np.atleast_2d(blk.F)
            if F.shape[1] != n or F.shape[0] != np.size(blk.d) or np.size(blk.r) != n:
                raise ConicError("SOC block dimensions inconsistent")

    def standard_form(self):
        """Return (P, q, A, b, n_eq, n_lin, soc_dims) with Az + s = b, s in K."""
        n = self.n
        rows = [self.A_eq, self.A_in]
        rhs = [self.b_eq, self.b_in]
        dims = []
        for blk in self.soc_blocks:
            F = np.atleast_2d(np.asarray(blk.F, dtype=float))
            r = np.asarray(blk.r, dtype=float).reshape(1, n)
            rows.append(np.vstack([-r, -F]))
            rhs.append(np.concatenate([[float(blk.s)], np.asarray(blk.d, dtype=float).ravel()]))
            dims.append(F.shape[0] + 1)
        A = np.ascontiguousarray(np.vstack(rows))
        b = np.ascontiguousarray(np.concatenate(rhs))
        P = np.zeros((n, n)) if self.Q is None else np.ascontiguousarray(self.Q)
        return (P, np.ascontiguousarray(self.q), A, b, self.A_eq.shape[0],
                self.A_in.shape[0], np.asarray(dims, dtype=np.int64))

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        val = float(self.q @ z)
        if self.Q is not None:
            val += 0.5 * float(z @ self.Q @ z)
        return val

    def violation(self, z) -> float:
        """Largest constraint violation of ``z`` (inf-norm)."""
        z = np.asarray(z, dtype=float)
        v = 0.0
        if self.b_eq.size:
            v = max(v, np.abs(self.A_eq @ z - self.b_eq).max())
        if self.b_in.size:
            v = max(v, (self.A_in @ z - self.b_in).max(initial=0.0))
        for blk in self.soc_blocks:
            lhs = np.linalg.norm(np.atleast_2d(blk.F) @ z + blk.d)
            v = max(v, lhs - (np.dot(blk.r, z) + blk.s))
        return float(v)


@dataclass
class ConicSolution:
    status: str
    z: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    certificate: float = np.inf

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def duals(self, program: ConicProgram):
        """Split the stacked dual vector into (eq, in, [soc...]) parts."""
        ne, ni = program.A_eq.shape[0], program.A_in.shape[0]
        out = [self.y[:ne], self.y[ne:ne + ni]]
        p = ne + ni
        for blk in program.soc_blocks:
            d = np.size(blk.d) + 1
            out.append(self.y[p:p + d])
            p += d
        return out


def solve(p: ConicProgram, warm=None, max_iter: int = DEFAULT_MAX_ITER) -> ConicSolution:
    """Solve ``p`` with the interior-point kernel.

    ``warm`` is accepted for interface compatibility; interior-point iterates
    start from a centred point, so it does not change the result.
    """
    P, q, A, b, n_eq, n_lin, dims = p.standard_form()
    if A.shape[0] == 0:
        # unconstrained: only bounded if q lies in range(P)
        if p.Q is None and np.any(q != 0):
            return ConicSolution("unbounded", np.zeros(p.n), -np.inf, 0.0, np.inf, 0)
        z = np.zeros(p.n) if p.Q is None else -np.linalg.lstsq(P, q, rcond=None)[0]
        return ConicSolution("optimal", z, p.objective(z), 0.0,
                             float(np.abs(P @ z + q).max(initial=0.0)), 0)
    status, x, s, y, it, pres, dres, gap, cert = _ipm.ipm_solve(
        P, q, A, b, n_eq, n_lin, dims, max_iter, EPS_ABS, EPS_REL, EPS_INFEAS, STATIC_REG)
    name = _STATUS[int(status)]
    obj = p.objective(x) if name == "optimal" else np.nan
    if name == "infeasible":
        obj = np.inf
    return ConicSolution(name, np.asarray(x), obj, float(pres), float(dres), int(it),
                         np.asarray(y), float(cert))


def solve_lp_feasibility(A_in, b_in) -> str:
    """Classify {z : A_in z <= b_in} as "feasible" or "infeasible"."""
    A_in = np.atleast_2d(np.asarray(A_in, dtype=float))
    sol = solve(ConicProgram(q=np.zeros(A_in.shape[1]), A_in=A_in, b_in=b_in))
    if sol.status == "optimal":
        return "feasible"
    if sol.status == "infeasible":
        return "infeasible"
    raise RuntimeError(f"feasibility LP ended with status {sol.status}")


def _mm_block(fh, name, M):
    M = np.atleast_2d(M)
    nz = np.argwhere(M != 0)
    fh.write(f"%%MatrixMarket matrix coordinate real general\n% block {name}\n")
    fh.write(f"{M.shape[0]} {M.shape[1]} {len(nz)}\n")
    for i, j in nz:
        fh.write(f"{i + 1} {j + 1} {M[i, j]:.17g}\n")


def dump(p: ConicProgram, path) -> None:
    """Write the program as a sequence of matrix-market coordinate blocks."""
    with open(path, "w") as fh:
        _mm_block(fh, "q", p.q.reshape(1, -1))
        if p.Q is not None:
            _mm_block(fh, "Q", p.Q)
        _mm_block(fh, "A_eq", p.A_eq)
        _mm_block(fh, "b_eq", p.b_eq.reshape(1, -1))
        _mm_block(fh, "A_in", p.A_in)
        _mm_block(fh, "b_in", p.b_in.reshape(1, -1))
        for k, blk in enumerate(p.soc_blocks):
            _mm_block(fh, f"soc{k}.F", blk.F)
            _mm_block(fh, f"soc{k}.d", np.reshape(blk.d, (1, -1)))
            _mm_block(fh, f"soc{k}.r", np.reshape(blk.r, (1, -1)))
            _mm_block(fh, f"soc{k}.s", np.array([[blk.s]]))
