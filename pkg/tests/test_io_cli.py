import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from platoon_rhc import __version__
from platoon_rhc.cli import EXIT_COLLISION, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, main
from platoon_rhc.io import read_table, write_run, write_table
from platoon_rhc.scenario import load_preset, scenario_from_dict, with_overrides
from platoon_rhc.sim import ESTIMATE_COLUMNS, STEP_COLUMNS, TRAJECTORY_COLUMNS, run

finite = st.floats(allow_nan=False, allow_infinity=False)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10**6), finite, st.sampled_from(["cav", "hdv2", "pv"]),
                          st.integers(0, 9), finite, finite, finite, finite | st.just(math.nan))))
def test_trajectory_table_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    write_table(path, TRAJECTORY_COLUMNS, rows)
    back = read_table(path)
    assert len(back) == len(rows)
    for got, want in zip(back, rows):
        for name, w in zip(TRAJECTORY_COLUMNS, want):
            if isinstance(w, float) and math.isnan(w):
                assert math.isnan(got[name])
            else:
                assert got[name] == w and type(got[name]) is type(w)


def test_numpy_scalars_written_as_plain_numbers(tmp_path):
    import numpy as np
    write_table(tmp_path / "n.csv", ("step", "t"), [(np.int64(3), np.float64(0.1))])
    assert (tmp_path / "n.csv").read_text() == "step,t\n3,0.1\n"


def test_missing_values_read_back_as_none(tmp_path):
    write_table(tmp_path / "s.csv", ("axis", "value", "formation_time"), [("N", 3.0, None)])
    assert read_table(tmp_path / "s.csv") == [{"axis": "N", "value": 3.0, "formation_time": None}]


@pytest.fixture(scope="module")
def short_run():
    return run(with_overrides(load_preset("fig3-no-pv"), {"duration": 3.0}))


def test_run_outputs_and_meta(tmp_path, short_run):
    paths = write_run(short_run, tmp_path)
    assert set(paths) == {"trajectory", "estimates", "steps", "meta"}
    meta = json.loads(paths["meta"].read_text())
    assert meta["version"] == __version__
    assert meta["seed"] == 7
    assert meta["columns"]["trajectory"] == list(TRAJECTORY_COLUMNS)
    assert meta["columns"]["steps"] == list(STEP_COLUMNS)
    assert meta["columns"]["estimates"] == list(ESTIMATE_COLUMNS)
    assert set(meta["ovm_params"]) == {"hdv2", "hdv3", "hdv4", "hdv5"}
    assert meta["metrics"]["steps"] == 30
    # the resolved config alone reproduces the run
    again = run(scenario_from_dict(meta["scenario"]))
    assert again.trajectory == short_run.trajectory


def test_written_trajectory_matches_result(tmp_path, short_run):
    rows = read_table(write_run(short_run, tmp_path)["trajectory"])
    assert [tuple(r[c] for c in TRAJECTORY_COLUMNS)[:2] for r in rows] == \
        [row[:2] for row in short_run.trajectory]
    assert rows[7]["position"] == short_run.trajectory[7][4]


def _cli(*argv):
    return main([str(a) for a in argv])


def test_cli_run_preset(tmp_path, capsys):
    assert _cli("run", "--preset", "fig3-no-pv", "--set", "duration=2", "--out", tmp_path) == EXIT_OK
    for name in ("trajectory.csv", "estimates.csv", "steps.csv", "meta.json"):
        assert (tmp_path / name).exists()
    assert "fig3-no-pv" in capsys.readouterr().out


def test_cli_zero_duration(tmp_path):
    assert _cli("run", "fig3-no-pv", "--set", "duration=0", "--out", tmp_path) == EXIT_OK
    assert read_table(tmp_path / "trajectory.csv") == []


def test_cli_seed_flag_is_echoed(tmp_path):
    assert _cli("run", "fig3-no-pv", "--seed", 12, "--set", "duration=0.5", "--out", tmp_path) == EXIT_OK
    assert json.loads((tmp_path / "meta.json").read_text())["seed"] == 12


@pytest.mark.parametrize("argv", [
    ("run", "missing.toml"),
    ("run",),
    ("run", "fig3-no-pv", "--set", "nope=1"),
    ("run", "fig3-no-pv", "--set", "duration"),
    ("run", "fig3-no-pv", "--preset", "fig4-with-pv"),
    ("check-feasibility", "fig3-no-pv"),
    ("sweep", "fig3-no-pv"),
])
def test_cli_config_errors(tmp_path, argv, capsys):
    assert _cli(*argv, *(["--out", tmp_path] if argv[0] != "check-feasibility" else [])) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_cli_collision_writes_partial_output(tmp_path, capsys):
    f = tmp_path / "crash.toml"
    f.write_text(
        "n_vehicles = 2\nperturbation = 0.0\nduration = 20.0\n"
        "[ovm]\nalpha = 0.05\nbeta = 0.001\n"
        "[initial]\npositions = [0.0, -72.0]\nspeeds = [0.0, 35.0]\n"
    )
    assert _cli("run", f, "--out", tmp_path / "o") == EXIT_COLLISION
    assert "collision" in capsys.readouterr().err
    meta = json.loads((tmp_path / "o" / "meta.json").read_text())
    assert meta["collision"]["follower"] == "hdv2"


def test_cli_feasibility_exit_codes(capsys):
    assert _cli("check-feasibility", "fig3-no-pv", "--set", "limits.L=5000") == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["platoon_feasible"] is True
    # a floor speed that keeps the gap from ever closing on a short road
    assert _cli("check-feasibility", "fig3-no-pv", "--set", "limits.L=20",
                "--set", "limits.v_min=15") == EXIT_INFEASIBLE


def test_cli_sweep_outputs(tmp_path):
    rc = _cli("sweep", "fig3-no-pv", "--axis", "N", "--values", "2,3", "--seeds", "0",
              "--set", "duration=2", "--out", tmp_path)
    assert rc == EXIT_OK
    cells = read_table(tmp_path / "sweep.csv")
    assert [(c["axis"], c["value"], c["seed"]) for c in cells] == [("N", 2.0, 0), ("N", 3.0, 0)]
    agg = read_table(tmp_path / "aggregate.csv")
    assert [a["value"] for a in agg] == [2.0, 3.0] and all(a["cells"] == 1 for a in agg)


def test_cli_sweep_all_cells_failing(tmp_path):
    rc = _cli("sweep", "fig3-no-pv", "--axis", "N", "--values", "3", "--seeds", "0",
              "--set", "initial.headway_factor=0.5", "--out", tmp_path)
    assert rc == EXIT_INFEASIBLE
    assert read_table(tmp_path / "sweep.csv")[0]["error"].startswith("ConfigError")
