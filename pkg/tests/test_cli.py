import json

import pytest

from kfwkb import cli
from kfwkb.acceptance import Run, run_all
from kfwkb.scenario import Scenario, builtin_names, load_scenario
from kfwkb.schemas import validate_dir

# small dip scenario: caustic at t = 1/2, one shock by T
SMALL = {
    "name": "small_dip",
    "units": {"x": "dimensionless", "t": "dimensionless", "eps": "dimensionless"},
    "symbol": {"dim": 1, "A": [1.0], "window": [-30.0, 30.0]},
    "initial": {
        "S0": {"poly": [1.0], "bumps": [{"amp": 1.0, "center": [0.0], "width": 1.0}]},
        "phi0": {"poly": [1.0], "support": [-3.0, 3.0], "taper": 1.0},
        "alpha": {"lo": -4.0, "hi": 4.0, "n": 321},
    },
    "T": 0.8,
    "dt": 0.004,
    "snapshot_times": [0.4, 0.8],
    "eps": [0.1],
    "x_grid": {"lo": -2.0, "hi": 2.0, "n": 81},
}


@pytest.fixture()
def small(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL))
    return p


def _json_files(d):
    return {f.name: f.read_bytes() for f in sorted(d.glob("*.json"))}


def test_shipped_scenarios_load():
    names = builtin_names()
    assert {"heat_bump", "convex_jump"} <= set(names)
    for n in names:
        assert isinstance(load_scenario(n), Scenario)


def test_forward_is_deterministic_and_valid(small, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["forward", "--scenario", str(small), "--out", str(a)]) == 0
    assert cli.main(["forward", "--scenario", str(small), "--out", str(b)]) == 0
    assert _json_files(a) == _json_files(b)
    validate_dir(a)
    summary = json.loads((a / "summary.json").read_text())
    assert summary["caustic"]["status"] != "none" and len(summary["shocks"]) == 1
    assert (a / "value_0.8.csv").exists() and (a / "solution_0.8_0.1.csv").exists()


def test_backward_is_deterministic_and_valid(small, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["backward", "--scenario", str(small), "--out", str(d)]) == 0
    assert _json_files(a) == _json_files(b)
    validate_dir(a)
    rep = json.loads((a / "backward_report.json").read_text())
    assert rep["terra"]["history"][-1]["intervals"]


def test_snapshot_and_eps_overrides(small, tmp_path):
    out = tmp_path / "o"
    assert cli.main(["forward", "--scenario", str(small), "--out", str(out), "--snapshot-times", "0.2",
                     "--eps"]) == 0
    assert (out / "value_0.2.csv").exists()
    assert not list(out.glob("solution_*.csv"))


def test_bad_scenario_exit_code(tmp_path, capsys):
    bad = dict(SMALL, T=-1.0)
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    assert cli.main(["forward", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["forward", "--scenario", "no_such_scenario", "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


def test_empty_eps_list_skips_eps_criteria():
    sc = Scenario.from_dict(dict(SMALL, eps=[]))
    ids = [r.id for r in run_all(sc, only=[1, 2, 3, 7, 8, 10, 11])]
    assert ids == [1, 3]


def test_tampered_step_fails_order_criterion():
    sc = Scenario.from_dict(dict(SMALL, dt=0.02))
    (res,) = run_all(sc, only=[11], run=Run(sc))
    assert res.passed is False
    assert not 3.5 <= res.measured["order"] <= 4.5


def test_sweep_reports_log_limit(small, tmp_path):
    out = tmp_path / "s"
    assert cli.main(["sweep-eps", "--scenario", str(small), "--out", str(out), "--eps", "0.1", "0.05"]) == 0
    rep = json.loads((out / "sweep.json").read_text())
    assert len(rep["rows"]) == 2 * len(SMALL["snapshot_times"])
    validate_dir(out)
