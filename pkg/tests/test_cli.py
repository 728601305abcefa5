import csv
import json

import pytest

from predcbf import cli

R = ["--range", "-1.5", "1.5", "-1.5", "1.5"]


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def grids(tmp_path_factory):
    root = tmp_path_factory.mktemp("grids")
    out = {}
    for d in (0.0, 0.005, 0.05):
        path = root / f"d{d}"
        args = ["grid", "--preset", "linear-unstable", *R, "--res", 21, "--out", path]
        if d:
            args += ["--tighten", d]
        assert run(*args) == 0
        out[d] = path
    return out


def test_grid_outputs(grids):
    d = grids[0.0]
    rows = list(csv.reader(open(d / "grid.csv")))
    assert rows[0] == ["x1", "x2", "V", "feasible"] and len(rows) == 21 * 21 + 1
    man = json.loads((d / "manifest.json").read_text())
    for f in man["files"]:
        assert (d / f).stat().st_size > 0
    levels = json.loads((d / "contours.json").read_text())
    assert [c["level"] for c in levels] == [0.0, 0.1, 0.3, 1.0, 3.0]


def test_grid_rejects_small_res(tmp_path):
    assert run("grid", "--res", 2, "--out", tmp_path) == 2
    assert run("grid", "--range", 1, 0, 0, 1, "--out", tmp_path) == 2
    assert run("grid", "--preset", "nope", "--out", tmp_path) == 2


def test_compare_and_determinism(grids, tmp_path):
    base = tmp_path / "k"
    assert run("baseline", "--preset", "linear-unstable", "--method", "kernel", *R,
               "--res", 21, "--out", base) == 0
    args = ["compare", "--grid", grids[0.0], grids[0.005], grids[0.05], "--baseline", base]
    assert run(*args, "--out", tmp_path / "r1") == 0
    assert run(*args, "--out", tmp_path / "r2") == 0
    a = (tmp_path / "r1" / "report.json").read_bytes()
    assert a == (tmp_path / "r2" / "report.json").read_bytes()
    rep = json.loads(a)
    assert all(n["nested"] for n in rep["nesting"])
    ratio = rep["area_ratio"]
    assert ratio["0.005"] >= ratio["0.05"]
    assert all(rep["inside_baseline"].values())


def test_compare_mismatch(grids, tmp_path):
    other = tmp_path / "g"
    assert run("grid", "--preset", "linear-unstable", *R, "--res", 5, "--out", other) == 0
    assert run("compare", "--grid", grids[0.0], other, "--out", tmp_path / "r") == 2


def test_simulate(tmp_path):
    assert run("simulate", "--preset", "linear-unstable", "--samples", 3, "--seed", 7,
               "--steps", 30, "--filter", "--out", tmp_path) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seeds"] == [7] and len(man["files"]) == 3
    assert {t["reason"] for t in man["trajectories"]} == {"converged-to-safe"}


def test_simulate_rejects_zero_samples(tmp_path):
    assert run("simulate", "--samples", 0, "--out", tmp_path) == 2


def test_baselines(tmp_path):
    assert run("baseline", "--preset", "linear-unstable", "--method", "polytope",
               "--out", tmp_path / "p") == 0
    man = json.loads((tmp_path / "p" / "manifest.json").read_text())
    assert man["contains_terminal_set"] and man["invariance_gap"] <= 1e-8
    assert run("baseline", "--preset", "nonlinear-pendulum", "--method", "polytope",
               "--out", tmp_path / "q") == 2
    assert run("baseline", "--preset", "nonlinear-pendulum", "--method", "handcrafted-cbf",
               "--range", -0.1, 0.1, -0.1, 0.1, "--res", 81, "--out", tmp_path / "h") == 0
    con = json.loads((tmp_path / "h" / "handcrafted_contour.json").read_text())
    assert con["closed"] == [True]


def test_spec_file(tmp_path, linear):
    from predcbf import model
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps(model.problem_to_json(linear.with_horizon(5))))
    assert run("grid", "--spec", spec, "--res", 5, "--out", tmp_path / "o") == 0
    assert run("grid", "--spec", tmp_path / "missing.json", "--out", tmp_path / "o") == 2


def test_jobs_env(monkeypatch, tmp_path):
    monkeypatch.setenv("PCBF_JOBS", "2")
    assert run("grid", *R, "--res", 5, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["parameters"]["jobs"] == 2


def test_help_exits_zero(capsys):
    assert run("--help") == 0
    assert "grid" in capsys.readouterr().out
