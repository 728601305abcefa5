import csv

import numpy as np
import pytest

from predcbf import safempc, simfilter
from predcbf.safempc import EPS_ZERO, SafeMpcProblem


def test_recovery_linear(soft_linear, linear):
    x0s = simfilter.sample_initial_states(soft_linear, 3, seed=7)
    for x0 in x0s:
        tr = simfilter.simulate(soft_linear, x0, 40)
        assert tr.V[0] > EPS_ZERO
        assert tr.reason == "converged-to-safe"
        assert tr.decrease_ok() and tr.dynamics_ok(linear.system)
        assert tr.steps == 40 and len(tr.states) == 41 and len(tr.V) == 41


def test_sampling_is_seeded(soft_linear):
    a = simfilter.sample_initial_states(soft_linear, 4, seed=3)
    b = simfilter.sample_initial_states(soft_linear, 4, seed=3)
    assert np.array_equal(a, b)
    lo, hi = simfilter.sample_box(soft_linear)
    assert np.allclose(lo, -1.2) and np.allclose(hi, 1.2)


def test_sampling_gives_up(soft_linear):
    with pytest.raises(RuntimeError):
        simfilter.sample_initial_states(soft_linear, 1, 0, box=([40, 40], [50, 50]), max_tries=20)


def test_infeasible_start_stops(soft_linear):
    tr = simfilter.simulate(soft_linear, [50.0, 50.0], 10)
    assert tr.reason == "infeasible" and tr.steps == 0 and np.isinf(tr.V[-1])


def test_filter_step_zero_modification(soft_linear, linear):
    x = np.array([0.3, -0.2])
    fs = simfilter.filter_step(soft_linear, x, linear.Kf @ x)
    assert fs.ok and fs.mod_norm <= 1e-5
    assert fs.stage2_slack <= fs.slack_budget + 1e-6


def test_filter_step_modifies_unsafe_input(soft_linear):
    x = np.array([0.9, 0.9])
    fs = simfilter.filter_step(soft_linear, x, [1.5])
    assert fs.ok and fs.mod_norm > 1e-3
    assert fs.stage2_slack <= fs.slack_budget + 1e-6


def test_filtered_run_and_csv(soft_linear, linear, tmp_path):
    tr = simfilter.simulate_filtered(soft_linear, [-1.2, 0.8], None, 20)
    assert tr.reason == "converged-to-safe" and tr.decrease_ok()
    assert tr.u_desired.shape == tr.inputs.shape
    tr.to_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0][:4] == ["k", "x1", "x2", "u1"] and "mod_norm" in rows[0]
    assert len(rows) == 22


def test_pendulum_recovery(soft_pendulum, pendulum):
    x0 = simfilter.sample_initial_states(soft_pendulum, 1, seed=1)[0]
    tr = simfilter.simulate(soft_pendulum, x0, 30)
    assert tr.reason == "converged-to-safe"
    assert tr.decrease_ok() and tr.dynamics_ok(pendulum.system)


def test_decrease_gaps_definition():
    tr = simfilter.Trajectory(np.zeros((3, 1)), np.zeros((2, 1)), np.array([0.5, 0.0]),
                              np.array([1.0, 0.5, 0.5]), ["optimal"] * 3, "horizon reached")
    assert np.allclose(tr.decrease_gaps(), [0.0, 0.0])
    assert tr.decrease_ok()
