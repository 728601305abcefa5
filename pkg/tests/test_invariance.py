import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from predcbf import invariance, model
from predcbf.invariance import GridKernel
from predcbf.model import Polytope


def test_dare_matches_scipy(linear):
    A, B = linear.system.A, linear.system.B
    Q, R = np.eye(2), np.eye(1)
    res = invariance.dare(A, B, Q, R)
    assert np.allclose(res.P, solve_discrete_are(A, B, Q, R), atol=1e-8)
    assert invariance.dare_residual(A, B, Q, R, res.P) < 1e-8
    assert np.abs(np.linalg.eigvals(A + B @ res.K)).max() < 1


def test_dare_unstabilizable():
    with pytest.raises(invariance.StabilizabilityError):
        invariance.dare(np.diag([2.0, 0.5]), np.array([[0.0], [1.0]]), np.eye(2), np.eye(1),
                        max_iter=2000)


def test_max_alpha_and_lyapunov(linear):
    P, K = linear.Xf.P, linear.Kf
    a = invariance.max_alpha(P, K, linear.X, linear.U)
    assert a >= 0.6
    # the ellipsoid at a touches some constraint
    E = model.TerminalSet.ellipsoid(P, a * 1.001)
    assert not (E.inside(linear.X) and E.inside(Polytope(linear.U.G @ K, linear.U.g)))
    Acl = linear.system.A + linear.system.B @ K
    assert invariance.lyapunov_margin(Acl, P) >= -1e-8


def test_max_alpha_empty_interior():
    with pytest.raises(invariance.EmptyInteriorError):
        invariance.max_alpha(np.eye(1), np.eye(1), Polytope([[1.0]], [-1.0]))


def test_max_invariant_polytope(linear):
    K = linear.Kf
    Acl = linear.system.A + linear.system.B @ K
    C = invariance.lqr_constraint_set(linear.X, linear.U, K)
    omega = invariance.max_invariant_polytope(Acl, C)
    assert invariance.invariance_gap(Acl, omega) <= 1e-8
    assert omega.subset_of(C)
    assert linear.Xf.inside(omega)
    # sampled points stay inside under the closed loop
    pts = np.random.default_rng(0).uniform(-1, 1, (400, 2))
    inside = pts[omega.contains(pts)]
    assert np.all(omega.contains(inside @ Acl.T, 1e-9))


def test_mpi_nonconvergence():
    # unstable closed loop on an unbounded strip never settles
    with pytest.raises(invariance.NonConvergenceError) as err:
        invariance.max_invariant_polytope(np.array([[1.0, 1.0], [0.0, 1.0]]),
                                          Polytope([[1.0, 0.0], [-1.0, 0.0]], [1.0, 1.0]),
                                          max_iter=5)
    assert err.value.last is not None


def test_kernel_1d_exact():
    # x+ = 2x + u, |x| <= 1, |u| <= 1: viable set is |x| <= 1
    sysm = model.SystemModel.linear([[2.0]], [[1.0]])
    ker = invariance.viability_kernel_grid(sysm, Polytope.box(2.0, 1), Polytope.box(1.0, 1),
                                           resolution=200, input_samples=41)
    c = ker.centers()[:, 0]
    inner = np.abs(c) < 0.95
    outer = np.abs(c) > 1.05
    assert np.all(ker.member[inner]) and not np.any(ker.member[outer])


def test_kernel_modes_and_io(linear, tmp_path):
    kc = invariance.viability_kernel_grid(linear.system, linear.X, linear.U, 41, 21, mode="center")
    ko = invariance.viability_kernel_grid(linear.system, linear.X, linear.U, 41, 21, mode="outer")
    assert ko.member[kc.member].all()
    assert kc.contains([[0.0, 0.0]])[0]
    kc.to_csv(tmp_path / "k.csv")
    back = GridKernel.from_csv(tmp_path / "k.csv")
    assert np.array_equal(back.member, kc.member)
    assert np.allclose(back.lo, kc.lo) and np.allclose(back.hi, kc.hi)
    with pytest.raises(ValueError):
        invariance.viability_kernel_grid(linear.system, linear.X, linear.U, 11, 5, mode="bad")


def test_kernel_contains_mpi(linear):
    K = linear.Kf
    Acl = linear.system.A + linear.system.B @ K
    omega = invariance.max_invariant_polytope(Acl, invariance.lqr_constraint_set(linear.X, linear.U, K))
    ker = invariance.viability_kernel_grid(linear.system, linear.X, linear.U, 61, 31, mode="outer")
    c = ker.centers()
    assert ker.member.ravel()[omega.contains(c)].all()


def test_pendulum_kernel_excludes_wide_states(pendulum):
    # the outer kernel over-approximates the viable set, so states outside it
    # can never have a zero value
    ker = invariance.viability_kernel_grid(pendulum.system, pendulum.X, pendulum.U, 201, 61,
                                           mode="outer")
    assert ker.contains([[0.0, 0.0], [0.02, 0.0], [0.1, -0.3]]).all()
    assert not ker.contains([[0.1, 0.0], [0.25, 0.0]]).any()
