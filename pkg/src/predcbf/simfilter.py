"""Closed-loop recovery simulation and the two-stage predictive safety filter."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import safempc
from .safempc import EPS_ZERO, SafeMpcProblem, SafeMpcSolution

DECREASE_TOL = 1e-5
CONVERGED_XI = 1e-4
CONVERGED_STEPS = 5


@dataclass
class Trajectory:
    states: np.ndarray
    inputs: np.ndarray
    xi0: np.ndarray
    V: np.ndarray
    statuses: list
    reason: str
    converged_at: Optional[int] = None
    u_desired: Optional[np.ndarray] = None
    mod_norm: Optional[np.ndarray] = None
    seed: Optional[int] = None

    @property
    def steps(self) -> int:
        return len(self.inputs)

    def decrease_gaps(self) -> np.ndarray:
        """V(k+1) - V(k) + xi0(k); the decrease inequality asks for <= 1e-5."""
        T = len(self.xi0)
        return self.V[1:T + 1] - self.V[:T] + self.xi0[:T]

    def decrease_ok(self, tol=DECREASE_TOL) -> bool:
        g = self.decrease_gaps()
        return bool(np.all(g <= tol)) if g.size else True

    def dynamics_ok(self, model, tol=1e-12) -> bool:
        # batched and single-step products can differ in the last bit
        if self.steps == 0:
            return True
        err = self.states[1:] - model.step(self.states[:-1], self.inputs)
        return bool(np.abs(err).max() <= tol)

    def to_csv(self, path):
        n = self.states.shape[1]
        m = self.inputs.shape[1] if self.inputs.ndim == 2 else 0
        head = ["k"] + [f"x{j + 1}" for j in range(n)] + [f"u{j + 1}" for j in range(m)]
        head += ["xi0", "V", "status"]
        filt = self.u_desired is not None
        if filt:
            head += [f"u_des_{j + 1}" for j in range(m)] + ["mod_norm"]
        fmt = lambda v: f"{v:.12g}"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            for k in range(len(self.states)):
                row = [k] + [fmt(v) for v in self.states[k]]
                if k < self.steps:
                    row += [fmt(v) for v in self.inputs[k]] + [fmt(self.xi0[k])]
                else:
                    row += [""] * m + [""]
                row += [fmt(self.V[k]), self.statuses[k] if k < len(self.statuses) else ""]
                if filt:
                    if k < self.steps:
                        row += [fmt(v) for v in self.u_desired[k]] + [fmt(self.mod_norm[k])]
                    else:
                        row += [""] * m + [""]
                w.writerow(row)


def _converged_at(xi0):
    run = 0
    for k, v in enumerate(xi0):
        run = run + 1 if v <= CONVERGED_XI else 0
        if run >= CONVERGED_STEPS:
            return k - CONVERGED_STEPS + 1
    return None


def _finish(states, inputs, xi0, V, statuses, infeasible, **extra):
    m = extra.pop("m")
    inputs = np.asarray(inputs, dtype=float).reshape(-1, m)
    xi0 = np.asarray(xi0, dtype=float)
    k0 = _converged_at(xi0)
    if infeasible:
        reason = "infeasible"
    elif k0 is not None:
        reason = "converged-to-safe"
    else:
        reason = "horizon reached"
    return Trajectory(np.asarray(states), inputs, xi0, np.asarray(V, dtype=float), statuses,
                      reason, k0, **extra)


def simulate(problem: SafeMpcProblem, x0, T: int) -> Trajectory:
    """Apply u0(x) for T steps, warm-starting from the shifted candidate."""
    model = problem.preset.system
    ctrl = safempc.Controller(problem)
    x = np.asarray(x0, dtype=float).ravel()
    states, inputs, xi0, V, statuses = [x], [], [], [], []
    for _ in range(T):
        sol = ctrl.solve(x)
        statuses.append(sol.status)
        if not sol.optimal:
            V.append(np.inf)
            return _finish(states, inputs, xi0, V, statuses, True, m=model.m)
        V.append(sol.V)
        xi0.append(sol.xi0)
        inputs.append(sol.u0.copy())
        x = model.step(x, sol.u0)
        states.append(x)
    last = ctrl.solve(x)
    statuses.append(last.status)
    V.append(last.V if last.optimal else np.inf)
    return _finish(states, inputs, xi0, V, statuses, False, m=model.m)


@dataclass
class FilterStep:
    x: np.ndarray
    u_desired: np.ndarray
    u_applied: Optional[np.ndarray]
    slack_budget: float
    stage1_status: str
    stage2_status: str
    mod_norm: float
    stage2_slack: float = np.nan
    stage1: Optional[SafeMpcSolution] = field(default=None, repr=False)
    stage2: Optional[SafeMpcSolution] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.stage1_status == "optimal" and self.stage2_status == "optimal"


def filter_step(problem: SafeMpcProblem, x, u_desired, init=None) -> FilterStep:
    """Stage 1 certifies the slack budget V(x); stage 2 stays closest to u_desired."""
    pre = problem.preset
    x = np.asarray(x, dtype=float).ravel()
    ud = np.atleast_1d(np.asarray(u_desired, dtype=float)).ravel()
    soft = problem if problem.variant in ("soft", "tightened") else problem.as_soft()
    s1 = safempc.solve(soft, x, init=init)
    if not s1.optimal:
        return FilterStep(x, ud, None, np.inf, s1.status, "skipped", np.nan, stage1=s1)
    fp = SafeMpcProblem.filter(pre, ud, max(s1.V, 0.0), eps_u=soft.eps_u)
    s2 = safempc.solve(fp, x, init=s1)
    if not s2.optimal:
        return FilterStep(x, ud, None, s1.V, s1.status, s2.status, np.nan, stage1=s1, stage2=s2)
    ua = s2.u0.copy()
    return FilterStep(x, ud, ua, s1.V, s1.status, s2.status, float(np.linalg.norm(ua - ud)),
                      float(s2.xi.sum()), s1, s2)


def linear_feedback(K):
    K = np.atleast_2d(np.asarray(K, dtype=float))
    return lambda x: K @ np.asarray(x, dtype=float)


def simulate_filtered(problem: SafeMpcProblem, x0, policy: Optional[Callable] = None,
                      T: int = 50) -> Trajectory:
    """Run the two-stage filter around ``policy`` (default: the terminal gain)."""
    pre = problem.preset
    model = pre.system
    if policy is None:
        policy = linear_feedback(pre.Kf if pre.Kf is not None else np.zeros((model.m, model.n)))
    x = np.asarray(x0, dtype=float).ravel()
    states, inputs, xi0, V, statuses, udes, mods = [x], [], [], [], [], [], []
    init = None
    for _ in range(T):
        ud = np.atleast_1d(policy(x))
        fs = filter_step(problem, x, ud, init=init)
        statuses.append(fs.stage1_status if not fs.ok else "optimal")
        if not fs.ok:
            V.append(np.inf)
            return _finish(states, inputs, xi0, V, statuses, True, m=model.m,
                           u_desired=np.asarray(udes).reshape(-1, model.m), mod_norm=np.asarray(mods))
        V.append(fs.slack_budget)
        xi0.append(fs.stage2.xi0)
        inputs.append(fs.u_applied)
        udes.append(ud)
        mods.append(fs.mod_norm)
        init = safempc.shifted_candidate(problem, fs.stage2) if model.kind != "linear" else None
        x = model.step(x, fs.u_applied)
        states.append(x)
    soft = problem if problem.variant in ("soft", "tightened") else problem.as_soft()
    last = safempc.solve(soft, x, init=init)
    statuses.append(last.status)
    V.append(last.V if last.optimal else np.inf)
    return _finish(states, inputs, xi0, V, statuses, False, m=model.m,
                   u_desired=np.asarray(udes).reshape(-1, model.m), mod_norm=np.asarray(mods))


def sample_box(problem: SafeMpcProblem, scale=1.2):
    """Bounding box of X scaled by ``scale`` about the origin, as (lo, hi)."""
    X = problem.preset.X
    n = X.dim
    hi = np.array([X.support(e) for e in np.eye(n)])
    lo = np.array([-X.support(-e) for e in np.eye(n)])
    return scale * lo, scale * hi


def sample_initial_states(problem: SafeMpcProblem, count: int, seed: int, box=None,
                          positive=True, max_tries=100_000):
    """Rejection sampling of recoverable states; ``positive`` asks for V > eps0."""
    rng = np.random.default_rng(seed)
    lo, hi = sample_box(problem) if box is None else (np.asarray(box[0]), np.asarray(box[1]))
    soft = problem if problem.variant in ("soft", "tightened") else problem.as_soft()
    out = []
    for _ in range(max_tries):
        if len(out) >= count:
            break
        x = rng.uniform(lo, hi)
        sol = safempc.solve(soft, x)
        if sol.optimal and (sol.V > EPS_ZERO or not positive):
            out.append(x)
    if len(out) < count:
        raise RuntimeError(f"found only {len(out)} of {count} admissible initial states")
    return np.asarray(out)
