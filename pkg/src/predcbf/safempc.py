"""Soft-constrained safe MPC and its hard, tightened and filter variants.

Decision vector layout: ``z = (x_0..x_N, u_0..u_{N-1}, xi_0..xi_{N-1})``.
The optimal value ``V = sum(xi)`` is the predictive barrier function.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import conic
from .model import ConfigurationError, ProblemPreset

EPS_U = 1e-6
EPS_ZERO = 1e-5
BUDGET_MARGIN = 1e-8

SQP_MAX_ITER = 50
SQP_MU = 1e3
SQP_MU_FACTOR = 2.0
SQP_TOL = 1e-8
SQP_ARMIJO = 1e-4
SQP_BACKTRACK = 0.5
SQP_MIN_STEP = 1e-10
SQP_STALL = 1e-3  # line-search cutback treated as stalling
SQP_STEP_TOL = 1e-6
SQP_PRED_TOL = 1e-6
SQP_PRED_TOL_V = 1e-9

VARIANTS = ("soft", "hard", "tightened", "filter")


@dataclass(frozen=True, eq=False)
class SafeMpcProblem:
    preset: ProblemPreset
    variant: str = "soft"
    delta: Optional[np.ndarray] = None
    u_p: Optional[np.ndarray] = None
    slack_budget: float = 0.0
    eps_u: float = EPS_U

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        N = self.preset.N
        if self.variant == "tightened":
            d = np.asarray(self.delta, dtype=float).ravel()
            if d.size != N:
                raise ConfigurationError(f"tightening needs {N} entries, got {d.size}")
            if d[0] != 0 or np.any(np.diff(d) < 0) or np.any(d < 0):
                raise ConfigurationError("tightening must start at 0 and be nondecreasing")
            object.__setattr__(self, "delta", d)
        if self.variant == "filter":
            up = np.atleast_1d(np.asarray(self.u_p, dtype=float)).ravel()
            if up.size != self.preset.system.m:
                raise ConfigurationError("desired input has the wrong dimension")
            if self.slack_budget < 0:
                raise ConfigurationError("slack budget must be nonnegative")
            object.__setattr__(self, "u_p", up)

    @classmethod
    def soft(cls, preset, eps_u=EPS_U):
        return cls(preset, "soft", eps_u=eps_u)

    @classmethod
    def hard(cls, preset, eps_u=EPS_U):
        return cls(preset, "hard", eps_u=eps_u)

    @classmethod
    def tightened(cls, preset, delta, eps_u=EPS_U):
        """Scalar ``delta`` means the linear schedule delta_i = i * delta."""
        d = np.asarray(delta, dtype=float)
        if d.ndim == 0:
            d = np.arange(preset.N) * float(d)
        return cls(preset, "tightened", delta=d, eps_u=eps_u)

    @classmethod
    def filter(cls, preset, u_p, slack_budget, eps_u=EPS_U):
        return cls(preset, "filter", u_p=u_p, slack_budget=float(slack_budget), eps_u=eps_u)

    def as_soft(self) -> "SafeMpcProblem":
        return SafeMpcProblem(self.preset, "soft", eps_u=self.eps_u)

    def fingerprint(self) -> str:
        tag = self.variant
        if self.variant == "tightened":
            tag += ":" + ",".join(f"{v:.12g}" for v in self.delta)
        return f"{self.preset.fingerprint()}|{tag}|{self.eps_u:.3g}"


@dataclass
class SafeMpcSolution:
    status: str
    x: np.ndarray
    u: np.ndarray
    xi: np.ndarray
    V: float
    iterations: int = 0
    objective: float = np.nan
    dyn_residual: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    @property
    def u0(self) -> np.ndarray:
        return self.u[0]

    @property
    def xi0(self) -> float:
        return float(self.xi[0])


class _Layout:
    def __init__(self, n, m, N):
        self.n, self.m, self.N = n, m, N
        self.nx = n * (N + 1)
        self.nu = m * N
        self.nz = self.nx + self.nu + N

    def x(self, i):
        return slice(i * self.n, (i + 1) * self.n)

    def u(self, i):
        o = self.nx + i * self.m
        return slice(o, o + self.m)

    def xi(self, i):
        return self.nx + self.nu + i

    def pack(self, x, u, xi):
        return np.concatenate([np.ravel(x), np.ravel(u), np.ravel(xi)])

    def unpack(self, z):
        x = z[: self.nx].reshape(self.N + 1, self.n)
        u = z[self.nx: self.nx + self.nu].reshape(self.N, self.m)
        xi = z[self.nx + self.nu:]
        return x, u, xi


def layout(problem: SafeMpcProblem) -> _Layout:
    s = problem.preset.system
    return _Layout(s.n, s.m, problem.preset.N)


def _stage_models(problem, lin):
    s = problem.preset.system
    N = problem.preset.N
    if lin is not None:
        return lin
    if s.kind != "linear":
        raise ConfigurationError("nonlinear models need linearizations; use sqp_solve")
    A, B, c = s.linearize(np.zeros(s.n), np.zeros(s.m))
    return [(A, B, c)] * N


def build(problem: SafeMpcProblem, x, lin=None) -> conic.ConicProgram:
    """Transcribe the MPC at state ``x`` into a conic program.

    ``lin`` is an optional list of per-stage affine models (A_i, B_i, c_i);
    linear systems use their own matrices when it is omitted.
    """
    pre = problem.preset
    L = layout(problem)
    n, m, N = L.n, L.m, L.N
    x = np.asarray(x, dtype=float).ravel()
    if x.size != n:
        raise ConfigurationError(f"state has {x.size} entries, expected {n}")
    stages = _stage_models(problem, lin)

    # equalities: initial state and dynamics
    Aeq = np.zeros((n * (N + 1), L.nz))
    beq = np.zeros(n * (N + 1))
    Aeq[:n, L.x(0)] = np.eye(n)
    beq[:n] = x
    for i, (Ai, Bi, ci) in enumerate(stages):
        r = slice(n * (i + 1), n * (i + 2))
        Aeq[r, L.x(i + 1)] = np.eye(n)
        Aeq[r, L.x(i)] = -Ai
        Aeq[r, L.u(i)] = -Bi
        beq[r] = ci
    eq_rows, eq_rhs = [Aeq], [beq]

    G, g = pre.X.G, pre.X.g
    Gu, gu = pre.U.G, pre.U.g
    kx, ku = len(g), len(gu)
    delta = problem.delta if problem.variant == "tightened" else np.zeros(N)

    rows, rhs = [], []
    for i in range(N):
        R = np.zeros((kx, L.nz))
        R[:, L.x(i)] = G
        R[:, L.xi(i)] = -1.0
        rows.append(R)
        rhs.append(g - delta[i])
    xi_idx = [L.xi(i) for i in range(N)]
    if problem.variant == "hard":
        E = np.zeros((N, L.nz))
        E[np.arange(N), xi_idx] = 1.0
        eq_rows.append(E)
        eq_rhs.append(np.zeros(N))
    else:
        R = np.zeros((N, L.nz))
        R[np.arange(N), xi_idx] = -1.0
        rows.append(R)
        rhs.append(np.zeros(N))
    for i in range(N):
        R = np.zeros((ku, L.nz))
        R[:, L.u(i)] = Gu
        rows.append(R)
        rhs.append(gu)

    socs = []
    Xf = pre.Xf
    if Xf.variant == "ellipsoid":
        C = np.linalg.cholesky(Xf.P)  # P = C C'
        F = np.zeros((n, L.nz))
        F[:, L.x(N)] = C.T
        socs.append(conic.SocBlock(F=F, d=np.zeros(n), r=np.zeros(L.nz), s=float(np.sqrt(Xf.alpha))))
    elif Xf.variant == "polytope":
        R = np.zeros((Xf.polytope.nrows, L.nz))
        R[:, L.x(N)] = Xf.polytope.G
        rows.append(R)
        rhs.append(Xf.polytope.g)
    else:
        E = np.zeros((n, L.nz))
        E[:, L.x(N)] = np.eye(n)
        eq_rows.append(E)
        eq_rhs.append(Xf.point)

    q = np.zeros(L.nz)
    Q = np.zeros((L.nz, L.nz))
    iu = np.arange(L.nx, L.nx + L.nu)
    Q[iu, iu] = 2.0 * problem.eps_u
    if problem.variant == "filter":
        # only u_0 is steered toward u_p; the tie-break keeps the rest unique
        i0 = np.arange(L.nx, L.nx + m)
        Q[i0, i0] = 2.0  # replaces the tie-break weight on u_0
        q[i0] = -2.0 * problem.u_p
        R = np.zeros((1, L.nz))
        R[0, L.nx + L.nu:] = 1.0
        rows.append(R)
        rhs.append(np.array([problem.slack_budget + BUDGET_MARGIN]))
    else:
        q[L.nx + L.nu:] = 1.0

    return conic.ConicProgram(
        q=q, Q=Q,
        A_eq=np.vstack(eq_rows), b_eq=np.concatenate(eq_rhs),
        A_in=np.vstack(rows), b_in=np.concatenate(rhs),
        soc_blocks=tuple(socs),
    )


def _empty_solution(problem, status, x, iterations=0, **diag):
    L = layout(problem)
    xs = np.full((L.N + 1, L.n), np.nan)
    xs[0] = x
    return SafeMpcSolution(status, xs, np.full((L.N, L.m), np.nan), np.full(L.N, np.nan),
                           np.inf, iterations, diagnostics=dict(diag))


def _from_conic(problem, x, sol: conic.ConicSolution, dyn_res=0.0) -> SafeMpcSolution:
    L = layout(problem)
    if sol.status != "optimal":
        return _empty_solution(problem, sol.status, x, sol.iterations,
                               certificate=sol.certificate)
    xs, us, xi = L.unpack(sol.z)
    xs = xs.copy()
    xs[0] = x  # exact by construction; removes solver noise
    xi = xi.copy()
    return SafeMpcSolution("optimal", xs, us.copy(), xi, float(xi.sum()), sol.iterations,
                           sol.objective, dyn_res,
                           {"primal_residual": sol.primal_residual,
                            "dual_residual": sol.dual_residual})


def _dyn_residual(model, xs, us):
    return xs[1:] - model.step(xs[:-1], us)


def solve(problem: SafeMpcProblem, x, init=None) -> SafeMpcSolution:
    """Solve any variant; linear models need one conic solve, nonlinear use SQP."""
    x = np.asarray(x, dtype=float).ravel()
    if problem.preset.system.kind != "linear":
        return sqp_solve(problem, x, init)
    sol = conic.solve(build(problem, x))
    out = _from_conic(problem, x, sol)
    if out.optimal:
        out.dyn_residual = float(np.abs(_dyn_residual(problem.preset.system, out.x, out.u)).max())
    return out


def solve_soft(problem: SafeMpcProblem, x, init=None) -> SafeMpcSolution:
    if problem.variant not in ("soft", "tightened"):
        raise ConfigurationError("solve_soft needs the soft or tightened variant")
    return solve(problem, x, init)


def solve_hard(problem: SafeMpcProblem, x, init=None) -> SafeMpcSolution:
    if problem.variant != "hard":
        problem = SafeMpcProblem.hard(problem.preset, problem.eps_u)
    return solve(problem, x, init)


# ---------------------------------------------------------------------------
# SQP for Euler-discretized nonlinear models


def _cost(problem, L, z):
    _, us, xi = L.unpack(z)
    if problem.variant == "filter":
        d = us[0] - problem.u_p
        return float(d @ d + problem.eps_u * (us ** 2).sum())
    return float(xi.sum() + problem.eps_u * (us ** 2).sum())


def _linear_violation(prog: conic.ConicProgram, n_dyn: int, z) -> float:
    """l1 violation of every constraint except the dynamics rows."""
    v = np.abs(prog.A_eq[n_dyn:] @ z - prog.b_eq[n_dyn:]).sum()
    v += np.maximum(prog.A_in @ z - prog.b_in, 0.0).sum()
    for blk in prog.soc_blocks:
        v += max(0.0, np.linalg.norm(blk.F @ z + blk.d) - (blk.r @ z + blk.s))
    return float(v)


def _rollout(model, x, us):
    xs = np.empty((len(us) + 1, model.n))
    xs[0] = x
    for i, u in enumerate(us):
        xs[i + 1] = model.step(xs[i], u)
    return xs


def sqp_solve(problem: SafeMpcProblem, x, init=None) -> SafeMpcSolution:
    """SQP over successive linearizations with an l1 merit line search.

    ``init`` may be a SafeMpcSolution or an (x_traj, u_traj[, xi]) tuple; the
    default keeps the state constant at ``x`` with zero input.
    """
    pre = problem.preset
    model = pre.system
    L = layout(problem)
    n, N = L.n, L.N
    x = np.asarray(x, dtype=float).ravel()

    if init is None:
        xs = np.tile(x, (N + 1, 1))
        us = np.zeros((N, L.m))
        xi = None
    else:
        if isinstance(init, SafeMpcSolution):
            xs, us, xi = init.x, init.u, init.xi
        else:
            xs, us = init[0], init[1]
            xi = init[2] if len(init) > 2 else None
        xs = np.array(xs, dtype=float)
        us = np.array(us, dtype=float)
        xs[0] = x
    viol = np.maximum(pre.X.residual(xs[:N]).max(axis=1), 0.0)
    if problem.variant == "hard":
        xi = np.zeros(N)
    elif xi is None or not np.all(np.isfinite(xi)):
        xi = viol
    else:
        xi = np.maximum(np.asarray(xi, dtype=float), viol)
    z = L.pack(xs, us, xi)

    n_dyn = n * (N + 1)
    mu = SQP_MU

    def merit(zz, prog):
        xx, uu, _ = L.unpack(zz)
        dres = np.abs(_dyn_residual(model, xx, uu)).sum()
        return _cost(problem, L, zz) + mu * (dres + _linear_violation(prog, n_dyn, zz))

    total_ipm = 0
    step_norm = np.inf
    dres_max = np.inf
    status = "max-iter"
    it = 0
    while it < SQP_MAX_ITER:
        it += 1
        xs, us, _ = L.unpack(z)
        prog = build(problem, x, [model.linearize(xs[i], us[i]) for i in range(N)])
        sol = conic.solve(prog)
        total_ipm += sol.iterations
        if sol.status != "optimal":
            return _empty_solution(problem, sol.status, x, it, ipm_iterations=total_ipm)
        # exact-penalty condition: the weight must dominate every multiplier
        mu = max(mu, SQP_MU_FACTOR * float(np.abs(sol.y).max(initial=0.0)))
        d = sol.z - z
        step_norm = float(np.abs(d).max())
        phi0 = merit(z, prog)
        # the subproblem optimum satisfies the linearized constraints exactly
        pred = phi0 - _cost(problem, L, sol.z)
        feas = max(float(np.abs(_dyn_residual(model, xs, us)).max()),
                   _linear_violation(prog, n_dyn, z))
        if feas <= SQP_TOL and pred <= SQP_PRED_TOL * (1.0 + abs(phi0)):
            # no first-order improvement left at a feasible point: stationary
            # (the step itself may be large on a degenerate optimal face)
            dres_max = float(np.abs(_dyn_residual(model, xs, us)).max())
            status = "optimal"
            break
        alpha = 1.0
        while True:
            zt = z + alpha * d
            # round-off allowance only when nothing is predicted anyway
            slack = 1e-12 * (1.0 + abs(phi0)) if pred <= 1e-12 * (1.0 + abs(phi0)) else 0.0
            if merit(zt, prog) <= phi0 - SQP_ARMIJO * alpha * max(pred, 0.0) + slack:
                break
            alpha *= SQP_BACKTRACK
            if alpha < SQP_MIN_STEP:
                break
        if alpha < SQP_STALL:
            # no useful step: still a V-stationary point when the slack part
            # predicts no gain and only the tie-break would move
            if feas <= SQP_TOL and problem.variant != "filter":
                pred_v = float(L.unpack(z)[2].sum() - L.unpack(sol.z)[2].sum())
                if pred_v <= SQP_PRED_TOL_V * (1.0 + abs(phi0)):
                    dres_max = float(np.abs(_dyn_residual(model, xs, us)).max())
                    status = "optimal"
                    break
        if alpha < SQP_MIN_STEP:
            break
        z = zt
        xs, us, _ = L.unpack(z)
        dres_max = float(np.abs(_dyn_residual(model, xs, us)).max())
        small = alpha * step_norm <= SQP_TOL or (alpha == 1.0 and step_norm <= SQP_STEP_TOL)
        if small and dres_max <= SQP_TOL:
            status = "optimal"
            break

    out = _from_conic(problem, x, conic.ConicSolution("optimal", z, _cost(problem, L, z), 0, 0, it))
    out.status = status
    out.iterations = it
    out.dyn_residual = dres_max
    out.diagnostics.update(ipm_iterations=total_ipm, step_norm=step_norm, penalty=mu)
    return out


# ---------------------------------------------------------------------------
# receding horizon


def shifted_candidate(problem: SafeMpcProblem, sol: SafeMpcSolution):
    """Feasible guess for the next step built from ``sol``.

    Returns (x_hat, u_hat, xi_hat) where the inputs are shifted by one stage,
    the terminal controller is appended, and the last slack is zero.
    """
    pre = problem.preset
    uN = pre.terminal_control(sol.x[-1])
    u_hat = np.vstack([sol.u[1:], uN.reshape(1, -1)])
    x_hat = np.vstack([sol.x[1:], pre.system.step(sol.x[-1], uN).reshape(1, -1)])
    xi_hat = np.concatenate([sol.xi[1:], [0.0]])
    return x_hat, u_hat, xi_hat


class Controller:
    """Receding-horizon controller u0(x) with the shifted-candidate warm start.

    Holds mutable warm-start state, so use one instance per trajectory.
    """

    def __init__(self, problem: SafeMpcProblem):
        if problem.variant not in ("soft", "tightened"):
            raise ConfigurationError("controller runs the soft or tightened variant")
        self.problem = problem
        self.last: Optional[SafeMpcSolution] = None
        self.candidate = None

    def reset(self):
        self.last = None
        self.candidate = None

    def candidate_cost(self) -> float:
        """Slack sum of the shifted candidate, an upper bound for the next V."""
        if self.candidate is None:
            return np.inf
        return float(np.sum(self.candidate[2]))

    def solve(self, x) -> SafeMpcSolution:
        sol = solve_soft(self.problem, x, init=self.candidate)
        if self.candidate is not None and self.problem.preset.system.kind != "linear":
            # the SQP is local; keep the better of warm and cold starts
            cold = solve_soft(self.problem, x)
            if cold.optimal and (not sol.optimal or cold.V < sol.V - 1e-9):
                sol = cold
        self.last = sol
        self.candidate = shifted_candidate(self.problem, sol) if sol.optimal else None
        return sol

    def __call__(self, x):
        sol = self.solve(x)
        if not sol.optimal:
            return None, np.nan, np.inf
        return sol.u0.copy(), sol.xi0, sol.V


def controller(problem: SafeMpcProblem, x):
    """Stateless convenience wrapper: (u0, xi0, V)."""
    return Controller(problem)(x)


def is_zero(V, eps=EPS_ZERO) -> bool:
    return bool(np.isfinite(V) and V <= eps)
