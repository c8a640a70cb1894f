import numpy as np
import pytest

from teecontrol.config import (
    default_paths,
    load_controller_config,
    load_plant_config,
    load_scenario_config,
    ScenarioConfig,
)
from teecontrol.errors import ConfigError

PLANT = """
[params]
tank_areas = [28.0, 32.0, 28.0, 32.0]
outlet_areas = [0.071, 0.057, 0.071, 0.057]
pump_gains = [3.33, 3.35]
flow_splits = [0.70, 0.60]
[operating_point]
x_eq = [12.4, 12.7, 1.8, 1.4]
u_eq = [3.0, 3.0]
"""


def test_shipped_files_exist():
    for path in default_paths().values():
        assert path.exists()


def test_shipped_plant(plant):
    assert plant.params.tank_areas == (28.0, 32.0, 28.0, 32.0)
    assert plant.Ts == 0.1 and plant.substeps == 10 and plant.noise_std == 0.0
    np.testing.assert_array_equal(plant.u_eq, [3, 3])


def test_plant_file_defaults(tmp_path):
    p = tmp_path / "p.toml"
    p.write_text(PLANT)
    cfg = load_plant_config(p)
    assert cfg.params.g == 981.0 and cfg.params.kc == 0.5 and cfg.Ts == 0.1
    np.testing.assert_array_equal(cfg.linear_model().A, load_plant_config().linear_model().A)


@pytest.mark.parametrize("edit", [
    ("flow_splits = [0.70, 0.60]", "flow_splits = [1.70, 0.60]"),
    ("x_eq = [12.4, 12.7, 1.8, 1.4]", "x_eq = [12.4, 12.7, 1.8]"),
    ("[params]", "[parameters]"),
    ("pump_gains = [3.33, 3.35]\n", ""),
])
def test_plant_file_errors(tmp_path, edit):
    p = tmp_path / "p.toml"
    p.write_text(PLANT.replace(*edit))
    with pytest.raises(ConfigError):
        load_plant_config(p)


def test_controller_roundtrip(tmp_path, controller):
    d = controller.to_dict()
    text = f'sign = "{d["sign"]}"\nL = {d["L"]}\nK = {d["K"]}\nx_hat0 = [12.0, 12.0, 2.0, 1.0]\n'
    p = tmp_path / "c.toml"
    p.write_text(text)
    back = load_controller_config(p)
    np.testing.assert_array_equal(back.K, controller.K)
    np.testing.assert_array_equal(back.x_hat0, [12, 12, 2, 1])


def test_controller_bad_sign(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('sign = "sideways"\nL = [[0,0],[0,0],[0,0],[0,0]]\nK = [[0,0,0,0],[0,0,0,0]]\n')
    with pytest.raises(ConfigError):
        load_controller_config(p)


def test_scenario_file(tmp_path):
    shipped = load_scenario_config(None)
    assert shipped.scenario == "tamper_fuzz" and shipped.knobs["flips"] == 10_000
    p = tmp_path / "s.toml"
    p.write_text('scenario = "replay_burst"\nseed = 2\nattack_window = [5, 50]\n[knobs]\nreplay_depth = 2\n')
    sc = load_scenario_config(p)
    assert sc.scenario == "replay_burst" and sc.attack_window == (5, 50) and sc.knobs["replay_depth"] == 2
    assert load_scenario_config(p, "eavesdrop").scenario == "eavesdrop"
    with pytest.raises(ConfigError):
        ScenarioConfig("eavesdrop", attack_window=(10, 5))
