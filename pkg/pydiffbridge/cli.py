"""Command line entry point: ``pydiffbridge <algorithm> --config run.ini``."""
import argparse
import logging
import sys
from typing import Dict, List, Optional, Sequence

from .config import ALGORITHMS, Defaults, ExperimentConfig
from .core import run_experiment
from .exceptions import ConfigError, DiffBridgeError
from .version import __version__

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

SHORTCUTS = {
    "seed": "experiment.seed",
    "output_dir": "experiment.output_dir",
    "workers": "experiment.workers",
    "model": "model.name",
    "horizon": "grid.horizon",
    "steps": "grid.steps",
    "iterations": "training.iterations",
    "batch_size": "training.batch_size",
    "rounds": "ipf.rounds",
    "samples": "sampling.samples",
    "observation": "sampling.observation",
    "input": "sampling.input",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pydiffbridge",
        description="Diffusion and Schrödinger bridge samplers for posteriors "
        "and unnormalized densities.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subparsers = parser.add_subparsers(dest="algorithm", required=True)
    for algorithm in ALGORITHMS:
        sub = subparsers.add_parser(algorithm, help=f"run the {algorithm} pipeline")
        sub.add_argument("--config", help="experiment INI file")
        sub.add_argument(
            "--defaults", help="INI file overriding package defaults (Defaults)"
        )
        sub.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override one config key; repeatable",
        )
        for name, dotted in SHORTCUTS.items():
            sub.add_argument(
                f"--{name.replace('_', '-')}", dest=name, help=f"shortcut for {dotted}"
            )
        sub.add_argument("--log-level", default="INFO", help="logging level")
        sub.add_argument(
            "--progress", action="store_true", help="show training progress bars"
        )
    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, str]:
    """``--set`` pairs followed by shortcut flags, later ones winning."""
    overrides: Dict[str, str] = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected SECTION.KEY=VALUE", item)
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for name, dotted in SHORTCUTS.items():
        value = getattr(args, name, None)
        if value is not None:
            overrides[dotted] = value
    if args.progress:
        overrides["logging.progress"] = "true"
    return overrides


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = collect_overrides(args)
    if args.defaults:
        Defaults.config_defaults(args.defaults)
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides, args.algorithm)
    sections: Dict[str, Dict[str, str]] = {}
    if args.algorithm == "verify":
        sections["experiment"] = {"seed": "0"}
    return ExperimentConfig.from_sections(sections, overrides, args.algorithm)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Runs one experiment.

    Returns 0 on success, 2 for an invalid config and 1 for any other
    failure; failures print one diagnostic line to stderr.
    """
    args = build_parser().parse_args(list(argv) if argv is not None else None)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args)
        record = run_experiment(config)
    except ConfigError as error:
        field = f" [{error.field}]" if error.field else ""
        print(f"pydiffbridge: config error{field}: {error}", file=sys.stderr)
        return EXIT_CONFIG
    except DiffBridgeError as error:
        print(f"pydiffbridge: {type(error).__name__}: {error}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as error:
        print(f"pydiffbridge: I/O error: {error}", file=sys.stderr)
        return EXIT_FAILURE
    logger.info("%s finished in %.1f s", config.algorithm, record.wall_clock_seconds)
    return EXIT_OK


def run(argv: Optional[List[str]] = None) -> None:
    """Console script wrapper."""
    sys.exit(main(argv))


if __name__ == "__main__":
    run()
