import numpy as np
import pytest

from predcbf import model, safempc
from predcbf.model import ConfigurationError
from predcbf.safempc import EPS_ZERO, SafeMpcProblem

cp = pytest.importorskip("cvxpy")


def cvx_value(pre, x0, delta=None, hard=False):
    """Slack-sum minimum of the linear problem written directly in cvxpy."""
    A, B = pre.system.A, pre.system.B
    N, n, m = pre.N, pre.system.n, pre.system.m
    x = cp.Variable((N + 1, n))
    u = cp.Variable((N, m))
    xi = cp.Variable(N, nonneg=True)
    d = np.zeros(N) if delta is None else np.arange(N) * delta
    cons = [x[0] == x0]
    for i in range(N):
        cons += [x[i + 1] == A @ x[i] + B @ u[i],
                 pre.X.G @ x[i] - xi[i] <= pre.X.g - d[i],
                 pre.U.G @ u[i] <= pre.U.g]
    cons.append(cp.quad_form(x[N], pre.Xf.P) <= pre.Xf.alpha)
    if hard:
        cons.append(xi == 0)
    prob = cp.Problem(cp.Minimize(cp.sum(xi)), cons)
    prob.solve()
    return prob.status, prob.value


@pytest.mark.parametrize("x0", [(0.0, 0.0), (1.2, 0.0), (-1.2, 0.8), (0.9, 0.9), (-1.4, 1.4),
                                (0.5, -1.3), (1.4, -0.6)])
def test_linear_value_matches_cvxpy(soft_linear, linear, x0):
    sol = safempc.solve(soft_linear, x0)
    status, ref = cvx_value(linear, np.array(x0))
    if status == "infeasible":
        assert sol.status == "infeasible"
    else:
        assert sol.optimal
        # the tie-break adds at most eps_u * N * umax^2 to the slack sum
        assert sol.V == pytest.approx(ref, abs=1e-4)
        assert sol.V >= ref - 1e-6


def test_far_states_are_infeasible(soft_linear):
    assert safempc.solve(soft_linear, [50.0, 50.0]).status == "infeasible"


def test_solution_is_consistent(soft_linear, linear):
    sol = safempc.solve(soft_linear, [-1.2, 0.8])
    assert sol.optimal
    sysm = linear.system
    assert np.allclose(sol.x[1:], sysm.step(sol.x[:-1], sol.u), atol=1e-8)
    assert np.all(sol.xi >= -1e-9)
    viol = np.maximum(linear.X.residual(sol.x[:-1]).max(axis=1), 0)
    assert np.all(sol.xi >= viol - 1e-8)
    assert linear.Xf.contains(sol.x[-1], 1e-7)
    assert np.all(np.abs(sol.u) <= 1.5 + 1e-8)
    assert sol.V == pytest.approx(sol.xi.sum())


@pytest.mark.parametrize("x0", [(0.0, 0.0), (0.5, 0.2), (1.2, 0.0), (-0.9, 0.9)])
def test_zero_value_iff_hard_feasible(linear, soft_linear, x0):
    hard = safempc.solve(SafeMpcProblem.hard(linear), x0)
    soft = safempc.solve(soft_linear, x0)
    assert (soft.V <= EPS_ZERO) == hard.optimal


def test_tightening_raises_value(linear, soft_linear):
    tp = SafeMpcProblem.tightened(linear, 0.05)
    assert np.allclose(tp.delta, 0.05 * np.arange(linear.N))
    for x0 in [(0.8, 0.1), (-1.2, 0.8), (0.3, -0.9)]:
        a, b = safempc.solve(soft_linear, x0), safempc.solve(tp, x0)
        assert b.V >= a.V - 1e-8
        st, ref = cvx_value(linear, np.array(x0), delta=0.05)
        assert b.V == pytest.approx(ref, abs=1e-4)


def test_filter_keeps_safe_desired_input(linear):
    x0 = np.array([0.2, -0.1])
    ud = linear.Kf @ x0
    fp = SafeMpcProblem.filter(linear, ud, 0.0)
    sol = safempc.solve(fp, x0)
    assert sol.optimal
    assert np.abs(sol.u0 - ud).max() <= 1e-5


def test_filter_respects_budget(linear, soft_linear):
    x0 = np.array([1.2, 0.0])
    V = safempc.solve(soft_linear, x0).V
    sol = safempc.solve(SafeMpcProblem.filter(linear, [1.5], V), x0)
    assert sol.optimal and sol.xi.sum() <= V + 1e-6


def test_shifted_candidate_is_feasible(linear, soft_linear):
    sol = safempc.solve(soft_linear, [-1.2, 0.8])
    xh, uh, xih = safempc.shifted_candidate(soft_linear, sol)
    assert np.allclose(xh[1:], linear.system.step(xh[:-1], uh))
    assert xih.sum() == pytest.approx(sol.V - sol.xi0)
    assert linear.Xf.contains(xh[-1], 1e-7)


def test_controller_decreases(soft_linear, linear):
    ctrl = safempc.Controller(soft_linear)
    x = np.array([-1.2, 0.8])
    prev = ctrl.solve(x)
    for _ in range(8):
        x = linear.system.step(x, prev.u0)
        cand = ctrl.candidate_cost()
        cur = ctrl.solve(x)
        assert cur.V <= cand + 1e-6
        assert cur.V - prev.V + prev.xi0 <= 1e-5
        prev = cur


def test_controller_rejects_filter(linear):
    with pytest.raises(ConfigurationError):
        safempc.Controller(SafeMpcProblem.filter(linear, [0.0], 0.0))


def test_problem_validation(linear):
    with pytest.raises(ConfigurationError):
        SafeMpcProblem(linear, "nope")
    with pytest.raises(ConfigurationError):
        SafeMpcProblem(linear, "tightened", delta=np.ones(linear.N))
    with pytest.raises(ConfigurationError):
        SafeMpcProblem.filter(linear, [0.0, 1.0], 0.0)
    with pytest.raises(ConfigurationError):
        SafeMpcProblem.filter(linear, [0.0], -1.0)
    with pytest.raises(ConfigurationError):
        safempc.build(SafeMpcProblem.soft(linear), [0.0, 0.0, 0.0])


def test_fingerprint_distinguishes_variants(linear):
    a = SafeMpcProblem.soft(linear).fingerprint()
    b = SafeMpcProblem.tightened(linear, 0.05).fingerprint()
    c = SafeMpcProblem.tightened(linear, 0.005).fingerprint()
    assert len({a, b, c}) == 3


# nonlinear model


def test_pendulum_origin(soft_pendulum):
    sol = safempc.solve(soft_pendulum, [0.0, 0.0])
    assert sol.optimal and sol.V <= EPS_ZERO


@pytest.mark.parametrize("x0", [(0.02, 0.0), (0.05, -0.1), (0.1, -0.3)])
def test_pendulum_zero_points(soft_pendulum, pendulum, x0):
    sol = safempc.solve(soft_pendulum, x0)
    assert sol.optimal and sol.V <= EPS_ZERO
    assert sol.dyn_residual <= 1e-8
    assert np.allclose(sol.x[1:], pendulum.system.step(sol.x[:-1], sol.u), atol=1e-8)
    assert np.allclose(sol.x[-1], 0.0, atol=1e-8)


def test_pendulum_positive_value(soft_pendulum):
    sol = safempc.solve(soft_pendulum, [0.35, -0.8])
    assert sol.status in ("optimal", "infeasible")
    if sol.optimal:
        assert sol.V > EPS_ZERO


def test_pendulum_hard_matches_soft_zero(pendulum, soft_pendulum):
    hard = SafeMpcProblem.hard(pendulum)
    for x0 in [(0.02, 0.0), (0.1, -0.3)]:
        assert safempc.solve(hard, x0).optimal
