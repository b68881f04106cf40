"""Defaults configuration."""
import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import ClassVar, Dict, Mapping, Optional, Tuple, Union

from .exceptions import ConfigError

ALGORITHMS = ("ddps", "dsb-ps", "ddgs", "dsb-gs", "verify", "eval")


@dataclass
class Defaults:
    """Stores default values for every tunable of the samplers, used when a
    config does not provide a value.
    Defaults can be fully/ partially overridden by providing a config file or by
    using config_defaults method"""

    OUTPUT_ROOT_ENV: ClassVar[str] = "PYDIFFBRIDGE_OUTPUT_ROOT"
    OUTPUT_ROOT: ClassVar[str] = "out"
    SCHEMA_VERSION: ClassVar[str] = "1"

    STATIC_DEFAULTS: ClassVar[Dict[str, Dict[str, str]]] = {
        "grid": {
            "horizon": "5.0",
            "steps": "64",
            "bridge_horizon": "1.0",
            "bridge_steps": "32",
        },
        "network": {
            "hidden": "64,64",
            "time_features": "16",
            "min_frequency": "1.0",
            "max_frequency": "32.0",
            "output_scale": "0.01",
        },
        "optimizer": {
            "learning_rate": "0.001",
            "beta1": "0.9",
            "beta2": "0.999",
            "epsilon": "1e-8",
        },
        "ddps": {
            "batch_size": "256",
            "iterations": "5000",
            "t_min_fraction": "0.001",
            "guidance": "none",
        },
        "dsb_ps": {
            "rounds": "5",
            "inner_iterations": "2000",
            "batch_size": "128",
            "warm_start": "true",
        },
        "ddgs": {
            "batch_size": "128",
            "iterations": "2000",
            "flow_iterations": "0",
            "flow_points": "256",
        },
        "dsb_gs": {
            "rounds": "3",
            "score_iterations": "2000",
            "correction_iterations": "2000",
            "distill_iterations": "3000",
            "distill_tolerance": "0.001",
            "flow_step": "0.0001",
            "max_live_networks": "2",
        },
        "oracle": {
            "points_1d": "400",
            "low_1d": "-8.0",
            "high_1d": "8.0",
            "points_2d": "80",
            "low_2d": "-6.0",
            "high_2d": "6.0",
            "tolerance": "1e-12",
            "max_iterations": "20000",
        },
        "quadrature": {
            "nodes": "400",
            "low": "-12.0",
            "high": "12.0",
        },
        "sampling": {
            "samples": "10000",
        },
        "logging": {
            "progress": "false",
            "log_every": "100",
        },
    }

    @classmethod
    def config_defaults(cls, config_file: Union[str, Path]) -> None:
        """Fully/ partially overrides defaults.

        Parameters:
        config_file: path for config file.
        """
        config = configparser.ConfigParser()
        config.optionxform = lambda optionstr: optionstr
        config.read(config_file)

        if config.has_section("parameters"):
            for key, value in dict(config["parameters"]).items():
                setattr(cls, key, value)

        for name, section in config.items():
            if name in ["parameters", configparser.DEFAULTSECT]:
                continue
            cls.STATIC_DEFAULTS.setdefault(name, {}).update(dict(section))

    @classmethod
    def get(cls, section: str, key: str) -> str:
        """Returns the raw string default of ``section.key``."""
        try:
            return cls.STATIC_DEFAULTS[section][key]
        except KeyError as error:
            raise ConfigError(
                f"no default for {section}.{key}", field=f"{section}.{key}"
            ) from error

    @classmethod
    def get_float(cls, section: str, key: str) -> float:
        """Returns ``section.key`` parsed as a float."""
        return _parse_float(cls.get(section, key), f"{section}.{key}")

    @classmethod
    def get_int(cls, section: str, key: str) -> int:
        """Returns ``section.key`` parsed as an int."""
        return _parse_int(cls.get(section, key), f"{section}.{key}")

    @classmethod
    def get_bool(cls, section: str, key: str) -> bool:
        """Returns ``section.key`` parsed as a bool."""
        return _parse_bool(cls.get(section, key), f"{section}.{key}")

    @classmethod
    def get_ints(cls, section: str, key: str) -> Tuple[int, ...]:
        """Returns ``section.key`` parsed as a comma-separated tuple of ints."""
        return tuple(
            _parse_int(item, f"{section}.{key}")
            for item in cls.get(section, key).split(",")
            if item.strip()
        )

    @classmethod
    def output_root(cls) -> str:
        """Default output root, from the environment when set."""
        return os.environ.get(cls.OUTPUT_ROOT_ENV, cls.OUTPUT_ROOT)


def _parse_float(value: str, name: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError) as error:
        raise ConfigError(f"{name}: expected a real number, got {value!r}", name) from error


def _parse_int(value: str, name: str) -> int:
    try:
        return int(str(value).strip())
    except (TypeError, ValueError) as error:
        raise ConfigError(f"{name}: expected an integer, got {value!r}", name) from error


def _parse_bool(value: str, name: str) -> bool:
    lowered = str(value).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{name}: expected a boolean, got {value!r}", name)


@dataclass
class ExperimentConfig:
    """One experiment: which algorithm to run on which model, with which seed,
    and where to write the artifacts. ``sections`` keeps the resolved INI
    content so that it can be echoed next to the outputs."""

    algorithm: str
    seed: int
    output_dir: str
    model_name: str
    model_params: Dict[str, str]
    horizon: float
    steps: int
    iterations: int
    batch_size: int
    rounds: int
    samples: int
    observation: Tuple[float, ...]
    workers: int = 1
    sections: Dict[str, Dict[str, str]] = field(default_factory=dict)

    @classmethod
    def from_file(
        cls,
        config_file: Union[str, Path],
        overrides: Optional[Mapping[str, str]] = None,
        algorithm: Optional[str] = None,
    ) -> "ExperimentConfig":
        """Reads an experiment config file.

        Parameters:
        config_file: path for config file.
        overrides: ``section.key`` -> value pairs applied after reading.
        algorithm: overrides ``experiment.algorithm`` (CLI subcommand).

        Returns the validated ExperimentConfig.
        """
        config = configparser.ConfigParser()
        config.optionxform = lambda optionstr: optionstr
        if not config.read(config_file):
            raise ConfigError(f"cannot read config file {config_file}", "config")
        sections = {
            name: dict(section)
            for name, section in config.items()
            if name != configparser.DEFAULTSECT
        }
        return cls.from_sections(sections, overrides, algorithm)

    @classmethod
    def from_sections(
        cls,
        sections: Mapping[str, Mapping[str, str]],
        overrides: Optional[Mapping[str, str]] = None,
        algorithm: Optional[str] = None,
    ) -> "ExperimentConfig":
        """Builds a config from already parsed INI sections."""
        resolved = {name: dict(values) for name, values in sections.items()}
        for dotted, value in (overrides or {}).items():
            if "." not in dotted:
                raise ConfigError(f"override {dotted!r} is not section.key", dotted)
            section, key = dotted.split(".", 1)
            resolved.setdefault(section, {})[key] = str(value)
        if algorithm is not None:
            resolved.setdefault("experiment", {})["algorithm"] = algorithm

        experiment = resolved.setdefault("experiment", {})
        chosen = experiment.get("algorithm", "")
        if chosen not in ALGORITHMS:
            raise ConfigError(
                f"experiment.algorithm: unknown algorithm {chosen!r}, "
                f"expected one of {', '.join(ALGORITHMS)}",
                "experiment.algorithm",
            )
        if "seed" not in experiment:
            raise ConfigError("experiment.seed: a seed is required", "experiment.seed")
        seed = _parse_int(experiment["seed"], "experiment.seed")
        outputDir = experiment.get("output_dir") or os.path.join(
            Defaults.output_root(), chosen
        )
        experiment["output_dir"] = outputDir
        workers = _parse_int(experiment.get("workers", "1"), "experiment.workers")
        if workers < 1:
            raise ConfigError("experiment.workers: must be >= 1", "experiment.workers")

        modelSection = dict(resolved.get("model", {}))
        modelName = modelSection.pop("name", "")
        if chosen not in ("verify",) and not modelName:
            raise ConfigError("model.name: a model name is required", "model.name")

        bridge = chosen in ("dsb-ps", "dsb-gs")
        grid = resolved.get("grid", {})
        horizon = _parse_float(
            grid.get(
                "horizon",
                Defaults.get("grid", "bridge_horizon" if bridge else "horizon"),
            ),
            "grid.horizon",
        )
        steps = _parse_int(
            grid.get(
                "steps", Defaults.get("grid", "bridge_steps" if bridge else "steps")
            ),
            "grid.steps",
        )
        if horizon <= 0:
            raise ConfigError("grid.horizon: must be positive", "grid.horizon")
        if steps < 1:
            raise ConfigError("grid.steps: must be >= 1", "grid.steps")

        section = chosen.replace("-", "_")
        training = resolved.get("training", {})
        iterationsKey = "inner_iterations" if chosen == "dsb-ps" else "iterations"
        if chosen == "dsb-gs":
            iterationsKey = "correction_iterations"
        iterations = _parse_int(
            training.get(
                "iterations",
                Defaults.STATIC_DEFAULTS.get(section, {}).get(iterationsKey, "1000"),
            ),
            "training.iterations",
        )
        batchSize = _parse_int(
            training.get(
                "batch_size",
                Defaults.STATIC_DEFAULTS.get(section, {}).get("batch_size", "128"),
            ),
            "training.batch_size",
        )
        if iterations < 0:
            raise ConfigError("training.iterations: must be >= 0", "training.iterations")
        if batchSize < 1:
            raise ConfigError("training.batch_size: must be >= 1", "training.batch_size")

        rounds = _parse_int(
            resolved.get("ipf", {}).get(
                "rounds", Defaults.STATIC_DEFAULTS.get(section, {}).get("rounds", "1")
            ),
            "ipf.rounds",
        )
        if rounds < (1 if chosen == "dsb-gs" else 0):
            raise ConfigError("ipf.rounds: too few IPF rounds", "ipf.rounds")

        sampling = resolved.get("sampling", {})
        samples = _parse_int(
            sampling.get("samples", Defaults.get("sampling", "samples")),
            "sampling.samples",
        )
        if samples < 1:
            raise ConfigError("sampling.samples: must be >= 1", "sampling.samples")
        observation = tuple(
            _parse_float(item, "sampling.observation")
            for item in sampling.get("observation", "").split(",")
            if item.strip()
        )

        return cls(
            algorithm=chosen,
            seed=seed,
            output_dir=outputDir,
            model_name=modelName,
            model_params=modelSection,
            horizon=horizon,
            steps=steps,
            iterations=iterations,
            batch_size=batchSize,
            rounds=rounds,
            samples=samples,
            observation=observation,
            workers=workers,
            sections=resolved,
        )

    def get(self, section: str, key: str) -> str:
        """Raw value of ``section.key`` from the experiment, else Defaults."""
        value = self.sections.get(section, {}).get(key)
        return Defaults.get(section, key) if value is None else value

    def get_float(self, section: str, key: str) -> float:
        return _parse_float(self.get(section, key), f"{section}.{key}")

    def get_int(self, section: str, key: str) -> int:
        return _parse_int(self.get(section, key), f"{section}.{key}")

    def get_bool(self, section: str, key: str) -> bool:
        return _parse_bool(self.get(section, key), f"{section}.{key}")

    def get_ints(self, section: str, key: str) -> Tuple[int, ...]:
        return tuple(
            _parse_int(item, f"{section}.{key}")
            for item in self.get(section, key).split(",")
            if item.strip()
        )

    def write(self, path: Union[str, Path]) -> None:
        """Echoes the resolved config into ``path``."""
        config = configparser.ConfigParser()
        config.optionxform = lambda optionstr: optionstr
        for name in sorted(self.sections):
            config[name] = {
                key: self.sections[name][key] for key in sorted(self.sections[name])
            }
        with open(path, "w", encoding="utf-8") as configFile:
            config.write(configFile)
