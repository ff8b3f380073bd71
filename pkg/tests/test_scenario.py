import pytest
from hypothesis import given
from hypothesis import strategies as st

from platoon_rhc.errors import ConfigError
from platoon_rhc.scenario import (
    PRESETS,
    Scenario,
    apply_axis,
    load_preset,
    load_scenario,
    parse_value,
    resolve_scenario,
    scenario_from_dict,
    with_overrides,
)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load_and_validate(name):
    sc = load_preset(name)
    assert sc.name == name
    assert sc.controller.horizon == 20 and sc.controller.tau == 0.1
    assert sc.limits.v_max == 35.0 and sc.limits.u_min == -5.0 and sc.limits.u_max == 3.0
    assert sc.criteria.eps_dp == 1.0 and sc.criteria.eps_v == 0.5


def test_pv_preset_brakes_to_floor_at_full_rate():
    sc = load_preset("fig4-with-pv")
    assert sc.has_pv
    (t0, v0), (t1, v1) = sc.pv_profile[1], sc.pv_profile[2]
    assert v1 == sc.limits.v_min
    assert (v1 - v0) / (t1 - t0) == sc.limits.u_min


def test_sweep_presets_carry_their_axes():
    assert load_preset("table3-scaling").sweep.values == (3, 4, 5, 6, 7, 8)
    assert load_preset("fig6-sensitivity").sweep.axis == "alpha"


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        load_preset("fig9")


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError, match="unknown keys"):
        scenario_from_dict({"n_vehicels": 4})


def test_unknown_nested_key_rejected():
    with pytest.raises(ConfigError, match=r"ovm: unknown keys \['gamma'\]"):
        scenario_from_dict({"ovm": {"gamma": 1.0}})


@pytest.mark.parametrize("data", [
    {"n_vehicles": 1},
    {"duration": -1.0},
    {"perturbation": 1.0},
    {"has_pv": True},
    {"n_vehicles": "five"},
    {"has_pv": 1},
    {"estimator": {"xi": 1.2}},
    {"events": [{"time": 1.0, "kind": "merge", "id": 2}]},
    {"limits": {"u_min": 1.0}},
])
def test_invalid_scenarios(data):
    with pytest.raises(ConfigError):
        scenario_from_dict(data)


def test_integral_float_accepted_for_int_field():
    assert scenario_from_dict({"n_vehicles": 4.0}).n_vehicles == 4


def test_load_from_file(tmp_path):
    f = tmp_path / "s.toml"
    f.write_text('name = "mine"\nn_vehicles = 3\n[ovm]\nalpha = 0.6\n')
    sc = load_scenario(f)
    assert (sc.name, sc.n_vehicles, sc.ovm.alpha, sc.ovm.beta) == ("mine", 3, 0.6, 0.2)
    assert resolve_scenario(str(f)) == sc


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_scenario(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("n_vehicles = = 3")
    with pytest.raises(ConfigError):
        load_scenario(bad)


def test_dotted_overrides():
    sc = with_overrides(load_preset("fig3-no-pv"), {"ovm.alpha": 0.9, "duration": 0, "seed": 11})
    assert sc.ovm.alpha == 0.9 and sc.duration == 0.0 and sc.seed == 11
    assert sc.ovm.beta == 0.2


def test_override_can_fill_an_absent_table():
    sc = with_overrides(Scenario(), {"sweep.axis": "rho"})
    assert sc.sweep.axis == "rho"


@pytest.mark.parametrize("path", ["ovm.gamma", "nope", "seed.x"])
def test_bad_override_paths(path):
    with pytest.raises(ConfigError):
        with_overrides(Scenario(), {path: 1})


@pytest.mark.parametrize("text, value", [
    ("3", 3), ("0.5", 0.5), ("true", True), ("[1, 2]", [1, 2]), ('"x"', "x"), ("fig3", "fig3"),
])
def test_parse_value(text, value):
    assert parse_value(text) == value


@given(st.integers(-10**9, 10**9))
def test_parse_value_integers_round_trip(n):
    assert parse_value(str(n)) == n


def test_apply_axis():
    base = load_preset("fig3-no-pv")
    assert apply_axis(base, "N", 7).n_vehicles == 7
    assert apply_axis(base, "rho", 2.5).ovm.rho == 2.5
    assert apply_axis(base, "v_d", 28.0).ovm.v_d == 28.0
    with pytest.raises(ConfigError):
        apply_axis(base, "N", 3.5)
    with pytest.raises(ConfigError):
        apply_axis(base, "gamma", 1.0)


def test_to_dict_reloads_to_the_same_scenario():
    sc = load_preset("fig4-with-pv")
    assert scenario_from_dict(sc.to_dict()) == sc


def test_n_steps():
    assert Scenario(duration=60.0).n_steps == 600
    assert Scenario(duration=0.0).n_steps == 0
