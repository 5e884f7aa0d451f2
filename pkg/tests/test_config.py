import copy

import numpy as np
import pytest

from phasesync.config import ConfigError, default_tree, load_config, parse_config
from phasesync.plant import build_system


@pytest.fixture
def tree():
    return default_tree()


def test_bundled_scenario_loads():
    cfg = load_config()
    assert cfg.frequency_plan.omega_glob == 1500
    assert cfg.frequency_plan.omega_tot_residual == 0
    assert set(cfg.nodes) == {"A", "B"}
    assert cfg.sim.dt_local == pytest.approx(1e-5)
    assert cfg.sim.dt_global == pytest.approx(1e-4)


def test_unknown_noise_profile_names_key_and_profile(tree):
    tree["nodes"]["A"]["excitation_laser"] = "no_such_laser"
    with pytest.raises(ConfigError) as info:
        parse_config(tree)
    assert info.value.key == "nodes.A.excitation_laser"
    assert "no_such_laser" in str(info.value)


def test_unknown_node_noise_entry(tree):
    tree["nodes"]["B"]["node_noise"] = ["objective_vibration", "ghost"]
    with pytest.raises(ConfigError, match=r"nodes\.B\.node_noise\[1\].*ghost"):
        parse_config(tree)


def test_zero_fiber_length_is_valid(tree):
    for arm in "AB":
        tree["nodes"][arm]["fiber_length"] = 0.0
    system = build_system(parse_config(tree))
    assert len(system.loops) == 5
    assert system.scenario.nodes["A"].paths["D5"].length == 0.0


@pytest.mark.parametrize("section,key,value,where", [
    ("sim", "duration", -1.0, "sim.duration"),
    ("sim", "dt_fast", 0.0, "sim.dt_fast"),
    ("sim", "dark_fraction", 1.5, "sim.dark_fraction"),
    ("frequency_plan", "omega_loc_A", 399999250.5, "frequency_plan.omega_loc_A"),
    ("outputs", "format", "hdf5", "outputs.format"),
])
def test_invalid_values_name_their_key(tree, section, key, value, where):
    tree[section][key] = value
    with pytest.raises(ConfigError) as info:
        parse_config(tree)
    assert info.value.key == where


def test_wrong_type_and_missing_key(tree):
    bad = copy.deepcopy(tree)
    bad["sim"]["master_seed"] = "seven"
    with pytest.raises(ConfigError, match="sim.master_seed"):
        parse_config(bad)
    del tree["nodes"]["A"]["local_loop"]
    with pytest.raises(ConfigError, match="nodes.A.local_loop"):
        parse_config(tree)


def test_extra_node_rejected(tree):
    tree["nodes"]["C"] = copy.deepcopy(tree["nodes"]["A"])
    with pytest.raises(ConfigError, match="nodes"):
        parse_config(tree)


def test_load_config_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("[sim\nduration = 1")
    with pytest.raises(ConfigError, match="TOML"):
        load_config(broken)


def test_overrides_reparse():
    cfg = load_config().with_overrides(duration=0.25, master_seed=7)
    assert cfg.sim.duration == 0.25
    assert cfg.sim.master_seed == 7
    assert load_config().sim.duration == 1.0


def test_theta_offset_in_degrees(tree):
    tree["optics"]["theta_offset_deg"] = 90.0
    assert parse_config(tree).theta_offset == pytest.approx(np.pi / 2)
