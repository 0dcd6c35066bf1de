import pytest

from fractura.config import (
    RunConfig,
    build_config,
    effective_tolerances,
    load_config,
    parse_config,
    parse_sets,
    resolve_scenario,
)
from fractura.errors import ConfigError
from fractura.model import CUBIC, TENSION_ONLY

EXAMPLE = """
# desk run with tension-only split
scenario = desk
rho-inf = 0.25      # more damping
time_adaptivity = no
stress_split = tension_only
tol_max = 1e-3
h_min = none
"""


def test_parse_config():
    values = parse_config(EXAMPLE)
    assert values == {
        "scenario": "desk",
        "rho_inf": 0.25,
        "time_adaptivity": False,
        "stress_split": TENSION_ONLY,
        "tol_max": 1e-3,
        "h_min": None,
    }


def test_parse_errors_name_the_line():
    with pytest.raises(ConfigError) as caught:
        parse_config("scenario = desk\n\ncolour = blue\n")
    assert caught.value.line == 3
    with pytest.raises(ConfigError) as caught:
        parse_config("rho_inf 0.5")
    assert caught.value.line == 1
    with pytest.raises(ConfigError):
        parse_config("max_stagger = lots")
    with pytest.raises(ConfigError):
        parse_config("mesh_adaptivity = maybe")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_sources_are_layered(tmp_path):
    """
    defaults < file < flags < --set
    """
    path = tmp_path / "run.cfg"
    path.write_text("rho_inf = 0.25\nchi = 0.3\ncadence = 5\n")
    config = build_config(path, {"rho_inf": 0.75, "chi": None}, ["cadence=2"])
    assert config.rho_inf == 0.75
    assert config.chi == 0.3
    assert config.cadence == 2
    assert config.tol_stg == RunConfig().tol_stg


def test_set_items():
    assert parse_sets(["max-steps=4", "solver=cg"]) == {"max_steps": 4, "solver": "cg"}
    with pytest.raises(ConfigError):
        parse_sets(["max_steps"])
    with pytest.raises(ConfigError):
        build_config(flags={"not_a_key": 1})


@pytest.mark.parametrize(
    "changes",
    [
        {"rho_inf": 1.5},
        {"chi": -0.1},
        {"tol_stg": 0.0},
        {"scenario": "bridge"},
        {"solver": "magic"},
        {"bdf3_variant": "forward"},
        {"tol_max": 1e-3, "tol_min": 1e-2},
        {"iteration_threshold": 1},
    ],
)
def test_validation(changes):
    with pytest.raises(ConfigError):
        RunConfig(**changes).validate()


def test_resolve_scenario_applies_overrides():
    config = RunConfig(scenario="desk", ell=0.02, degradation=CUBIC, shape=0.5, traction=5e3, nx=32, ny=16)
    scenario = resolve_scenario(config)
    assert scenario.material.ell == 0.02
    assert scenario.material.degradation.kind == CUBIC
    assert scenario.material.degradation.shape == 0.5
    assert scenario.traction == 5e3
    assert scenario.build_mesh().n_triangles == 32 * 16 * 2
    assert scenario.refinement_floor == pytest.approx(0.004)


def test_effective_tolerances():
    scenario = resolve_scenario(RunConfig(scenario="elastic"))
    assert effective_tolerances(RunConfig(), scenario) == pytest.approx((5e-3, 5e-5))
    assert effective_tolerances(RunConfig(tol_max=1e-2, tol_min=1e-3), scenario) == pytest.approx((1e-2, 1e-3))
    with pytest.raises(ConfigError):
        effective_tolerances(RunConfig(tol_min=1e-2), scenario)
