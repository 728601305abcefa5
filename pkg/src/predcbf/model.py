"""Systems, constraint sets, terminal sets and the two built-in problem presets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import conic


class ConfigurationError(ValueError):
    """Inconsistent dimensions or malformed problem data."""


class UsageError(ValueError):
    """Unknown preset or bad user-facing argument."""


def _frozen(a, ndim=None):
    a = np.array(a, dtype=float)
    if ndim == 2:
        a = np.atleast_2d(a)
    elif ndim == 1:
        a = np.atleast_1d(a).ravel()
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# dynamics


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Discrete-time dynamics, either x+ = Ax + Bu or Euler-forward of fc.

    Nonlinear vector fields and their Jacobians must broadcast over leading
    axes: ``fc(x, u)`` with ``x`` of shape (..., n) returns (..., n);
    ``jac_x`` returns (..., n, n) and ``jac_u`` returns (..., n, m).
    """

    kind: str
    n: int
    m: int
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    fc: Optional[Callable] = None
    jac_x: Optional[Callable] = None
    jac_u: Optional[Callable] = None
    dt: float = 0.0
    name: str = ""
    scheme: str = "euler"

    @classmethod
    def linear(cls, A, B, name="linear"):
        A = _frozen(A, 2)
        B = np.array(B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        B = _frozen(B, 2)
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n:
            raise ConfigurationError(f"A is {A.shape}, B is {B.shape}")
        return cls("linear", n, B.shape[1], A=A, B=B, name=name)

    @classmethod
    def euler(cls, fc, jac_x, jac_u, dt, n, m, name="nonlinear"):
        if dt <= 0:
            raise ConfigurationError("step size must be positive")
        return cls("nonlinear", n, m, fc=fc, jac_x=jac_x, jac_u=jac_u, dt=float(dt), name=name)

    def _check(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if u.ndim == 0:
            u = u.reshape(1)
        if x.shape[-1] != self.n or u.shape[-1] != self.m:
            raise ConfigurationError(
                f"expected x in R^{self.n} and u in R^{self.m}, got {x.shape} and {u.shape}")
        return x, u

    def step(self, x, u):
        """Return f(x, u); broadcasts over leading axes."""
        x, u = self._check(x, u)
        if self.kind == "linear":
            return x @ self.A.T + u @ self.B.T
        return x + self.dt * self.fc(x, u)

    def jacobians(self, x, u):
        """Discrete-time Jacobians (df/dx, df/du) at (x, u)."""
        x, u = self._check(x, u)
        if self.kind == "linear":
            shp = x.shape[:-1]
            return (np.broadcast_to(self.A, shp + self.A.shape),
                    np.broadcast_to(self.B, shp + self.B.shape))
        Ad = np.eye(self.n) + self.dt * self.jac_x(x, u)
        Bd = self.dt * self.jac_u(x, u)
        return Ad, Bd

    def linearize(self, x, u):
        """Affine model (A_d, B_d, c_d) exact at (x, u)."""
        x, u = self._check(x, u)
        if self.kind == "linear":
            return np.array(self.A), np.array(self.B), np.zeros(self.n)
        Ad, Bd = self.jacobians(x, u)
        c = self.step(x, u) - Ad @ x - Bd @ u
        return Ad, Bd, c


def step(model: SystemModel, x, u):
    return model.step(x, u)


def linearize(model: SystemModel, x, u):
    return model.linearize(x, u)


# the pendulum-like plant used by the nonlinear preset


def pendulum_fc(x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.empty(np.broadcast_shapes(x.shape, x.shape[:-1] + (2,)))
    out[..., 0] = x[..., 1]
    out[..., 1] = 10.0 * np.sin(2.0 * x[..., 0]) + 0.5 * u[..., 0]
    return out


def pendulum_jac_x(x, u):
    x = np.asarray(x, dtype=float)
    J = np.zeros(x.shape[:-1] + (2, 2))
    J[..., 0, 1] = 1.0
    J[..., 1, 0] = 20.0 * np.cos(2.0 * x[..., 0])
    return J


def pendulum_jac_u(x, u):
    x = np.asarray(x, dtype=float)
    J = np.zeros(x.shape[:-1] + (2, 1))
    J[..., 1, 0] = 0.5
    return J


NONLINEAR_FIELDS = {
    "pendulum": (pendulum_fc, pendulum_jac_x, pendulum_jac_u, 2, 1),
}


def named_nonlinear(name: str, dt: float) -> SystemModel:
    try:
        fc, jx, ju, n, m = NONLINEAR_FIELDS[name]
    except KeyError:
        raise UsageError(f"unknown nonlinear model {name!r}; valid: {sorted(NONLINEAR_FIELDS)}")
    return SystemModel.euler(fc, jx, ju, dt, n, m, name=name)


# ---------------------------------------------------------------------------
# sets


@dataclass(frozen=True, eq=False)
class Polytope:
    """H-representation {x : G x <= g}."""

    G: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        G = _frozen(self.G, 2)
        g = _frozen(self.g, 1)
        if G.shape[0] != g.size:
            raise ConfigurationError(f"G has {G.shape[0]} rows but g has {g.size} entries")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g", g)

    @classmethod
    def box(cls, r, n=None):
        """{x : |x_j| <= r_j}; scalar r needs n."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if r.size == 1 and n is not None:
            r = np.full(n, r[0])
        n = r.size
        I = np.eye(n)
        return cls(np.vstack([I, -I]), np.concatenate([r, r]))

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    @property
    def nrows(self) -> int:
        return self.G.shape[0]

    def residual(self, x):
        """c(x) = Gx - g, rowwise; broadcasts over leading axes of x."""
        return np.asarray(x, dtype=float) @ self.G.T - self.g

    def contains(self, x, tol=0.0):
        return np.all(self.residual(x) <= tol, axis=-1)

    def intersect(self, other: "Polytope") -> "Polytope":
        return Polytope(np.vstack([self.G, other.G]), np.concatenate([self.g, other.g]))

    def support(self, a) -> float:
        """max a'x over the polytope (inf if unbounded, -inf if empty)."""
        sol = conic.solve(conic.ConicProgram(q=-np.asarray(a, dtype=float), A_in=self.G, b_in=self.g))
        if sol.status == "optimal":
            return -sol.objective
        if sol.status == "unbounded":
            return np.inf
        if sol.status == "infeasible":
            return -np.inf
        raise RuntimeError(f"support LP ended with status {sol.status}")

    def is_empty(self) -> bool:
        return conic.solve_lp_feasibility(self.G, self.g) == "infeasible"

    def reduce(self, tol=1e-9) -> "Polytope":
        """Drop redundant rows, one LP per row against the rows kept so far."""
        G = self.G / np.maximum(np.linalg.norm(self.G, axis=1, keepdims=True), 1e-300)
        g = self.g / np.maximum(np.linalg.norm(self.G, axis=1), 1e-300)
        keep = np.ones(len(g), dtype=bool)
        for i in range(len(g)):
            keep[i] = False
            others = Polytope(np.vstack([G[keep], G[i]]), np.concatenate([g[keep], [g[i] + 1.0]]))
            if others.support(G[i]) > g[i] + tol:
                keep[i] = True
        return Polytope(G[keep], g[keep])

    def subset_of(self, other: "Polytope", tol=1e-9) -> bool:
        return all(self.support(a) <= b + tol for a, b in zip(other.G, other.g))

    def to_json(self) -> dict:
        return {"G": self.G.tolist(), "g": self.g.tolist()}


@dataclass(frozen=True, eq=False)
class TerminalSet:
    """Ellipsoid {x'Px <= alpha}, polytope, or a single point."""

    variant: str
    P: Optional[np.ndarray] = None
    alpha: float = 0.0
    polytope: Optional[Polytope] = None
    point: Optional[np.ndarray] = None

    @classmethod
    def ellipsoid(cls, P, alpha):
        P = _frozen(P, 2)
        if P.shape[0] != P.shape[1] or np.abs(P - P.T).max() > 1e-10:
            raise ConfigurationError("ellipsoid matrix must be square and symmetric")
        if np.linalg.eigvalsh(P).min() <= 0:
            raise ConfigurationError("ellipsoid matrix must be positive definite")
        if alpha < 0:
            raise ConfigurationError("ellipsoid level must be nonnegative")
        return cls("ellipsoid", P=P, alpha=float(alpha))

    @classmethod
    def from_polytope(cls, poly: Polytope):
        return cls("polytope", polytope=poly)

    @classmethod
    def single_point(cls, x):
        return cls("point", point=_frozen(x, 1))

    @property
    def dim(self) -> int:
        if self.variant == "ellipsoid":
            return self.P.shape[0]
        if self.variant == "polytope":
            return self.polytope.dim
        return self.point.size

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        if self.variant == "ellipsoid":
            return np.einsum("...i,ij,...j->...", x, self.P, x) <= self.alpha + tol
        if self.variant == "polytope":
            return self.polytope.contains(x, tol)
        return np.all(np.abs(x - self.point) <= tol, axis=-1)

    def inside(self, X: Polytope, tol=1e-9) -> bool:
        """Containment in X; exact for every variant."""
        if self.variant == "ellipsoid":
            Pinv = np.linalg.inv(self.P)
            h = np.sqrt(self.alpha * np.einsum("ij,jk,ik->i", X.G, Pinv, X.G))
            return bool(np.all(h <= X.g + tol))
        if self.variant == "polytope":
            return self.polytope.subset_of(X, tol)
        return bool(X.contains(self.point, tol))


# ---------------------------------------------------------------------------
# presets


@dataclass(frozen=True, eq=False)
class ProblemPreset:
    system: SystemModel
    X: Polytope
    U: Polytope
    Xf: TerminalSet
    N: int
    Kf: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        n, m = self.system.n, self.system.m
        if self.N < 1:
            raise ConfigurationError("horizon must be at least 1")
        if self.X.dim != n or self.U.dim != m or self.Xf.dim != n:
            raise ConfigurationError("set dimensions do not match the system")
        if self.Kf is not None:
            K = _frozen(self.Kf, 2)
            if K.shape != (m, n):
                raise ConfigurationError(f"terminal gain must be {m}x{n}")
            object.__setattr__(self, "Kf", K)

    def terminal_control(self, x):
        """Terminal control law; zero input when no gain is given."""
        if self.Kf is None:
            return np.zeros(self.system.m)
        return self.Kf @ np.asarray(x, dtype=float)

    def with_horizon(self, N: int) -> "ProblemPreset":
        return ProblemPreset(self.system, self.X, self.U, self.Xf, int(N), self.Kf, self.name)

    def fingerprint(self) -> str:
        return json.dumps(problem_to_json(self), sort_keys=True)


LINEAR_A = [[1.5, 1.0], [0.0, 1.0]]
LINEAR_B = [[0.5], [0.5]]
LINEAR_KP = [[-1.3735, -1.6166]]
LINEAR_P = [[3.3729, 0.3776], [0.3776, 1.1956]]
LINEAR_ALPHA = 0.6

PRESETS = ("linear-unstable", "nonlinear-pendulum")


def preset(name: str) -> ProblemPreset:
    if name == "linear-unstable":
        return ProblemPreset(
            system=SystemModel.linear(LINEAR_A, LINEAR_B, name="linear-unstable"),
            X=Polytope.box(1.0, 2),
            U=Polytope.box(1.5, 1),
            Xf=TerminalSet.ellipsoid(LINEAR_P, LINEAR_ALPHA),
            N=10,
            Kf=np.array(LINEAR_KP),
            name=name,
        )
    if name == "nonlinear-pendulum":
        return ProblemPreset(
            system=named_nonlinear("pendulum", 0.5),
            X=Polytope.box([0.3, 0.6]),
            U=Polytope.box(3.0, 1),
            Xf=TerminalSet.single_point([0.0, 0.0]),
            N=10,
            Kf=np.zeros((1, 2)),
            name=name,
        )
    raise UsageError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")


# ---------------------------------------------------------------------------
# JSON problem specs


def _poly_from_json(obj, n):
    if "box" in obj:
        return Polytope.box(obj["box"], n)
    return Polytope(obj["G"], obj["g"])


def problem_from_json(spec: dict) -> ProblemPreset:
    try:
        sysobj = spec["system"]
        if "linear" in sysobj:
            system = SystemModel.linear(sysobj["linear"]["A"], sysobj["linear"]["B"])
        elif "nonlinear" in sysobj:
            nl = sysobj["nonlinear"]
            system = named_nonlinear(nl["name"], nl["dt"])
        else:
            raise ConfigurationError("system must be 'linear' or 'nonlinear'")
        X = _poly_from_json(spec["X"], system.n)
        U = _poly_from_json(spec["U"], system.m)
        xf = spec["Xf"]
        if "ellipsoid" in xf:
            Xf = TerminalSet.ellipsoid(xf["ellipsoid"]["P"], xf["ellipsoid"]["alpha"])
        elif "polytope" in xf:
            Xf = TerminalSet.from_polytope(Polytope(xf["polytope"]["G"], xf["polytope"]["g"]))
        elif "point" in xf:
            Xf = TerminalSet.single_point(xf["point"])
        else:
            raise ConfigurationError("Xf must be ellipsoid, polytope or point")
        Kf = spec.get("Kf")
        return ProblemPreset(system, X, U, Xf, int(spec["N"]),
                             None if Kf is None else np.array(Kf, dtype=float),
                             name=spec.get("name", "spec"))
    except KeyError as exc:
        raise ConfigurationError(f"problem spec is missing field {exc}") from None


def problem_to_json(p: ProblemPreset) -> dict:
    s = p.system
    if s.kind == "linear":
        sysobj = {"linear": {"A": s.A.tolist(), "B": s.B.tolist()}}
    else:
        sysobj = {"nonlinear": {"name": s.name, "dt": s.dt}}
    if p.Xf.variant == "ellipsoid":
        xf = {"ellipsoid": {"P": p.Xf.P.tolist(), "alpha": p.Xf.alpha}}
    elif p.Xf.variant == "polytope":
        xf = {"polytope": p.Xf.polytope.to_json()}
    else:
        xf = {"point": p.Xf.point.tolist()}
    out = {"system": sysobj, "X": p.X.to_json(), "U": p.U.to_json(), "Xf": xf, "N": p.N}
    if p.Kf is not None:
        out["Kf"] = p.Kf.tolist()
    return out


def load_problem(path) -> ProblemPreset:
    with open(path) as fh:
        return problem_from_json(json.load(fh))
