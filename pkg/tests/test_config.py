"""Test cases for the __config__ module."""
import os
from pathlib import Path

import pytest

from pydiffbridge.config import Defaults, ExperimentConfig
from pydiffbridge.exceptions import ConfigError


@pytest.fixture(name="sections")
def _sections() -> dict:
    """Fixture for a minimal ddps experiment."""
    return {
        "experiment": {"algorithm": "ddps", "seed": "3"},
        "model": {"name": "conjugate", "prior_var": "2.0"},
        "sampling": {"observation": "1.0", "samples": "10"},
    }


def test_config_defaults(tmpdir) -> None:
    """It overrides defaults variables."""
    configFilePath = os.path.join(tmpdir, "config.ini")
    saved = dict(Defaults.STATIC_DEFAULTS["ddps"])
    savedRoot = Defaults.OUTPUT_ROOT

    with open(configFilePath, "w", encoding="utf-8") as configFile:
        configFile.write("[parameters]\n")
        configFile.write("OUTPUT_ROOT=elsewhere\n\n")
        configFile.write("[ddps]\nbatch_size=7\n")

    try:
        Defaults.config_defaults(configFilePath)
        assert Defaults.get_int("ddps", "batch_size") == 7
        assert Defaults.get_int("ddps", "iterations") == int(saved["iterations"])
        assert Defaults.OUTPUT_ROOT == "elsewhere"
    finally:
        Defaults.STATIC_DEFAULTS["ddps"] = saved
        Defaults.OUTPUT_ROOT = savedRoot


def test_defaults_typed_getters() -> None:
    """It parses typed defaults."""
    assert Defaults.get_ints("network", "hidden") == (64, 64)
    assert Defaults.get_bool("dsb_ps", "warm_start") is True
    assert Defaults.get_float("grid", "horizon") == 5.0


def test_defaults_missing_key() -> None:
    """It names the missing key."""
    with pytest.raises(ConfigError) as error:
        Defaults.get("grid", "nope")
    assert error.value.field == "grid.nope"


def test_output_root_environment(monkeypatch) -> None:
    """It reads the output root from the environment."""
    monkeypatch.setenv(Defaults.OUTPUT_ROOT_ENV, "/tmp/runs")
    assert Defaults.output_root() == "/tmp/runs"


def test_experiment_from_sections(sections: dict, monkeypatch) -> None:
    """It resolves algorithm defaults and the output directory."""
    monkeypatch.delenv(Defaults.OUTPUT_ROOT_ENV, raising=False)
    config = ExperimentConfig.from_sections(sections)
    assert config.algorithm == "ddps"
    assert config.seed == 3
    assert config.model_name == "conjugate"
    assert config.model_params == {"prior_var": "2.0"}
    assert config.horizon == Defaults.get_float("grid", "horizon")
    assert config.iterations == Defaults.get_int("ddps", "iterations")
    assert config.observation == (1.0,)
    assert config.output_dir == os.path.join(Defaults.OUTPUT_ROOT, "ddps")


def test_experiment_bridge_grid(sections: dict) -> None:
    """It uses the short bridge grid for bridge samplers."""
    config = ExperimentConfig.from_sections(sections, algorithm="dsb-ps")
    assert config.horizon == Defaults.get_float("grid", "bridge_horizon")
    assert config.steps == Defaults.get_int("grid", "bridge_steps")


def test_experiment_overrides(sections: dict) -> None:
    """It applies section.key overrides after the file."""
    config = ExperimentConfig.from_sections(
        sections, {"grid.steps": "8", "training.iterations": "5"}
    )
    assert config.steps == 8
    assert config.iterations == 5
    assert config.get_int("grid", "steps") == 8
    assert config.get_float("optimizer", "learning_rate") == Defaults.get_float(
        "optimizer", "learning_rate"
    )


@pytest.mark.parametrize(
    "override, field",
    [
        ({"experiment.algorithm": "sgld"}, "experiment.algorithm"),
        ({"experiment.seed": "x"}, "experiment.seed"),
        ({"grid.horizon": "-1"}, "grid.horizon"),
        ({"training.batch_size": "0"}, "training.batch_size"),
        ({"experiment.workers": "0"}, "experiment.workers"),
        ({"sampling.observation": "a"}, "sampling.observation"),
        ({"nodots": "1"}, "nodots"),
    ],
)
def test_experiment_invalid(sections: dict, override: dict, field: str) -> None:
    """It rejects invalid values naming the field."""
    with pytest.raises(ConfigError) as error:
        ExperimentConfig.from_sections(sections, override)
    assert error.value.field == field


def test_experiment_requires_seed(sections: dict) -> None:
    """It refuses implicit entropy."""
    del sections["experiment"]["seed"]
    with pytest.raises(ConfigError) as error:
        ExperimentConfig.from_sections(sections)
    assert error.value.field == "experiment.seed"


def test_experiment_write_round_trip(sections: dict, tmpdir) -> None:
    """It echoes a config that reads back identically."""
    config = ExperimentConfig.from_sections(sections)
    path = Path(tmpdir) / "echo.ini"
    config.write(path)
    assert ExperimentConfig.from_file(path) == config


def test_experiment_unreadable_file(tmpdir) -> None:
    """It reports a missing config file."""
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(os.path.join(tmpdir, "missing.ini"))
