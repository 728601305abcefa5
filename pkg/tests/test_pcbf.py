import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predcbf import pcbf
from predcbf.pcbf import ContourSet, ValueGrid


def circle_grid(res=81, r=0.5):
    return ValueGrid.from_function(lambda p: float(np.hypot(*p) - r), [[-1, 1], [-1, 1]], res)


def test_circle_contour_closed_ccw():
    g = circle_grid()
    con = pcbf.extract_contour(g, 0.0, eps0=0.0)
    assert len(con.polylines) == 1 and con.closed == [True]
    poly = con.polylines[0]
    assert np.allclose(poly[0], poly[-1])
    assert pcbf.signed_area(poly) == pytest.approx(np.pi * 0.25, rel=5e-3)
    assert np.abs(np.hypot(poly[:, 0], poly[:, 1]) - 0.5).max() < 2e-3


def test_zero_level_means_threshold():
    g = ValueGrid.from_function(lambda p: float(max(np.hypot(*p) - 0.5, 0.0)), [[-1, 1], [-1, 1]], 41)
    con = pcbf.extract_contour(g, 0.0)
    assert con.level == 0.0 and len(con.polylines) == 1


def test_open_line_orientation():
    # f = x1: walking upward keeps the sublevel set x1 < 0.1 on the left
    g = ValueGrid.from_function(lambda p: float(p[0]), [[-1, 1], [-1, 1]], 21)
    con = pcbf.extract_contour(g, 0.1, eps0=0.0)
    assert con.closed == [False]
    p = con.polylines[0]
    assert np.allclose(p[:, 0], 0.1)
    assert p[-1, 1] > p[0, 1]


def test_saddle_splits():
    vals = np.array([[1.0, -1.0], [-1.0, 1.0]])
    g = ValueGrid(np.zeros(2), np.ones(2), (2, 2), vals, np.ones((2, 2), bool), np.zeros((2, 2), bool))
    con = pcbf.extract_contour(g, 0.0, eps0=0.0)
    assert len(con.polylines) == 2


def test_infeasible_cells_bound_the_contour():
    g = circle_grid(41)
    g.feasible[np.abs(g.centers()[:, 0].reshape(41, 41)) > 0.8] = False
    g.values[~g.feasible] = np.inf
    con = pcbf.extract_contour(g, 0.0, eps0=0.0)
    assert np.all(np.isfinite(con.points()))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.15, 0.6), st.floats(-0.2, 0.2), st.floats(-0.2, 0.2))
def test_contour_points_on_adjacent_cells(r, cx, cy):
    g = ValueGrid.from_function(lambda p: float(np.hypot(p[0] - cx, p[1] - cy) - r),
                                [[-1, 1], [-1, 1]], 31)
    con = pcbf.extract_contour(g, 0.0, eps0=0.0)
    h = g.cell_size
    for poly, closed in zip(con.polylines, con.closed):
        steps = np.abs(np.diff(poly, axis=0))
        assert np.all(steps <= h * 1.0 + 1e-12)
        if closed:
            assert np.allclose(poly[0], poly[-1])


def test_hausdorff():
    a = ContourSet(0.0, [np.array([[0.0, 0.0], [1.0, 0.0]])], [False])
    b = ContourSet(0.0, [np.array([[0.0, 0.5], [1.0, 0.5]])], [False])
    assert pcbf.hausdorff(a, b) == pytest.approx(0.5)
    assert pcbf.hausdorff(a, ContourSet(0.0)) == np.inf


def test_csv_roundtrip(tmp_path):
    g = circle_grid(11)
    g.feasible[0, 0] = False
    g.values[0, 0] = np.inf
    g.unresolved[1, 1] = True
    g.feasible[1, 1] = False
    g.values[1, 1] = np.nan
    g.to_csv(tmp_path / "g.csv")
    back = ValueGrid.from_csv(tmp_path / "g.csv")
    assert back.resolution == g.resolution
    assert np.array_equal(back.feasible, g.feasible)
    assert np.array_equal(back.unresolved, g.unresolved)
    ok = g.feasible
    assert np.allclose(back.values[ok], g.values[ok])


def test_contour_json_roundtrip():
    con = pcbf.extract_contour(circle_grid(21), 0.0, eps0=0.0)
    back = ContourSet.from_json(con.to_json())
    assert np.allclose(back.points(), con.points())


def test_eval_grid_linear(soft_linear):
    g = pcbf.eval_grid(soft_linear, [[-1.5, 1.5], [-1.5, 1.5]], 9)
    assert g.values.shape == (9, 9)
    fin = g.values[g.feasible]
    assert np.all(fin >= -1e-9)
    assert np.array_equal(g.feasible, np.isfinite(g.values))
    assert g.unresolved_fraction() == 0.0
    assert g.zero_set()[4, 4]


def test_eval_grid_parallel_matches(soft_linear):
    a = pcbf.eval_grid(soft_linear, [[-1.5, 1.5], [-1.5, 1.5]], 7, jobs=1)
    b = pcbf.eval_grid(soft_linear, [[-1.5, 1.5], [-1.5, 1.5]], 7, jobs=2)
    assert np.array_equal(a.feasible, b.feasible)
    assert np.allclose(a.values[a.feasible], b.values[b.feasible])


def test_check_cbf_linear(soft_linear):
    pts = np.random.default_rng(2).uniform(-1.2, 1.2, (20, 2))
    rep = pcbf.check_cbf(soft_linear, pts)
    assert rep.in_domain.any() and rep.ok
    s = rep.summary()
    assert s["ok"] and s["points"] == 20


def test_handcrafted_contour():
    con = pcbf.handcrafted_contour([[-0.1, 0.1], [-0.1, 0.1]], 101)
    assert con.closed == [True]
    p = con.points()
    assert np.abs(pcbf.handcrafted_h(p)).max() < 0.05
    assert pcbf.signed_area(con.polylines[0]) > 0
