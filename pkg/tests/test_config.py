"""Unit tests for the experiment configuration layer."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from akpz_lab.config import DEFAULTS, EXPERIMENT_KEYS, EXPERIMENTS, ExperimentConfig, template
from akpz_lab.exceptions import ConfigError


def _write_config(tmp_path: Path, payload: dict) -> Path:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return path


def test_defaults_for_every_experiment(tmp_path: Path):
    """Every experiment builds a valid config from its defaults."""
    for experiment in EXPERIMENTS:
        params = {key: DEFAULTS[key] for key in EXPERIMENT_KEYS[experiment]}
        params["out"] = tmp_path
        cfg = ExperimentConfig.from_cli(experiment, params)
        assert cfg.experiment == experiment
        assert cfg.output.out_dir == tmp_path


def test_from_cli_mapping(tmp_path: Path):
    """Verify that CLI values land in the right settings sections."""
    cfg = ExperimentConfig.from_cli(
        "make-shape",
        {
            "model": "square",
            "method": "variational",
            "C": "affine:i,0",
            "shape": "affine:0.5,0.4",
            "grid": "9x11",
            "extent": "0,1,0,2",
            "seed_z": "0.1+1.2i",
            "margin": 0.05,
            "out": tmp_path,
        },
    )
    assert cfg.model.name == "square"
    assert cfg.model.margin == 0.05
    assert cfg.solver.method == "variational"
    assert cfg.solver.seed_z == complex(0.1, 1.2)
    assert cfg.grid.shape == (9, 11)
    assert cfg.grid.geometry.spacing == pytest.approx((0.125, 0.2))


def test_unknown_model_is_rejected(tmp_path: Path):
    """An unknown model name is a configuration error."""
    with pytest.raises(ConfigError) as exc_info:
        ExperimentConfig.from_cli("akpz-map", {"model": "kagome", "out": tmp_path})
    assert exc_info.value.exit_code == 2


@pytest.mark.parametrize(
    "key, value",
    [("grid", "2x9"), ("extent", "1,0,0,1"), ("speed", "im-zz"), ("resolution", 0), ("solver", "rk4")],
)
def test_invalid_values(tmp_path: Path, key: str, value):
    """Malformed values raise ConfigError naming the key."""
    experiment = "el-preserve" if key in {"grid", "extent", "solver"} else "akpz-map"
    with pytest.raises(ConfigError) as exc_info:
        ExperimentConfig.from_cli(experiment, {key: value, "out": tmp_path})
    assert exc_info.value.details["key"] == key


def test_harmonicity_needs_z_speed(tmp_path: Path):
    """Slope-native speeds have no f(z) to take the Laplacian of."""
    with pytest.raises(ConfigError):
        ExperimentConfig.from_cli("harmonicity", {"speed": "quadratic:1,0,1", "out": tmp_path})


def test_config_file_fills_defaulted_keys(tmp_path: Path):
    """File values replace defaults, but explicit flags win."""
    path = _write_config(tmp_path, {"speed": "re-z2", "resolution": 7, "model": "square"})
    params = {"speed": "im-z", "resolution": 30, "model": "honeycomb", "out": tmp_path}
    cfg = ExperimentConfig.from_cli("akpz-map", params, defaulted={"speed", "model"}, config_file=path)
    assert cfg.speed.preset == "re-z2"
    assert cfg.model.name == "square"
    assert cfg.grid.resolution == 30


def test_config_file_unknown_key(tmp_path: Path):
    """Keys the experiment does not accept are rejected."""
    path = _write_config(tmp_path, {"nu": 0.1})
    with pytest.raises(ConfigError, match="Unknown config key"):
        ExperimentConfig.from_cli("akpz-map", {"out": tmp_path}, config_file=path)


def test_config_file_must_be_an_object(tmp_path: Path):
    """A JSON list is not a config."""
    path = tmp_path / "config.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_cli("akpz-map", {"out": tmp_path}, config_file=path)


def test_output_path_must_not_be_a_file(tmp_path: Path):
    """--out pointing at a regular file is refused."""
    target = tmp_path / "taken"
    target.write_text("")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_cli("harmonicity", {"out": target})


def test_to_dict_is_json_ready(tmp_path: Path):
    """The manifest form holds plain values only."""
    cfg = ExperimentConfig.from_cli("make-shape", {"seed_z": "0.5+1i", "out": tmp_path})
    data = cfg.to_dict()
    assert data["output"]["out_dir"] == str(tmp_path)
    assert data["solver"]["seed_z"] == [0.5, 1.0]
    json.dumps(data)


def test_template_lists_accepted_keys():
    """Templates carry exactly the keys of their experiment."""
    assert set(template("surface-tension")) == set(EXPERIMENT_KEYS["surface-tension"])
    assert template("accept") == {"quick": False, "out": "results"}
    with pytest.raises(ConfigError):
        template("nope")
