import argparse
import logging
import sys
from pathlib import Path
from typing import NoReturn, Sequence

import toml

from .backend import get_backend
from .cli.handlers import (
    RunContext,
    cmd_calibrate,
    cmd_evaluate,
    cmd_gen_data,
    cmd_reason,
    cmd_train,
    load_config,
)
from .exceptions import ConfigError, ReasonersError
from .metrics import get_run_metrics
from .settings import Settings, get_settings
from .storage import get_storage

LOGGER = logging.getLogger(__name__)

PYPROJECT = Path(__file__).resolve().parent.parent / "pyproject.toml"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2


def get_project_metadata() -> tuple[str, str]:
    try:
        with open(PYPROJECT, "r") as pyproject_file:
            pyproject_data = toml.load(pyproject_file)
    except OSError:
        # installed without the source tree
        return "ood-reasoners", "unknown"
    metadata = pyproject_data["tool"]["poetry"]
    return metadata["name"], metadata["version"]


class ReasonersArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="Run config YAML file")
    common.add_argument("--seed", type=int, help="Override the config seed")
    common.add_argument(
        "--deterministic",
        action="store_true",
        help="Force deterministic kernels (on by default in the reference config)",
    )
    common.add_argument("--out-dir", type=Path, help="Directory for every artifact of the run")
    common.add_argument("--log-level", help="debug, info, warning or error")
    return common


def build_parser() -> ReasonersArgumentParser:
    name, version = get_project_metadata()
    common = _common_flags()
    parser = ReasonersArgumentParser(
        prog=name,
        description="Train a logic VAE and use its latent dims as per-factor OOD reasoners.",
        parents=[common],
    )
    parser.add_argument("--version", action="version", version=f"{name} {version}")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ReasonersArgumentParser)

    commands.add_parser("gen-data", parents=[common], help="Render the synthetic dataset")
    commands.add_parser("train", parents=[common], help="Train the model on the train split")

    for command, text in (
        ("calibrate", "Fit one reasoner per factor on the calibration split"),
        ("evaluate", "AUROC, mutual information and latent export on the test splits"),
    ):
        sub = commands.add_parser(command, parents=[common], help=text)
        sub.add_argument("--checkpoint", default="best", help="Checkpoint name")

    reason = commands.add_parser("reason", parents=[common], help="Print OOD verdicts for images")
    reason.add_argument("images", nargs="+", type=Path, help="Image files or directories")
    reason.add_argument("--checkpoint", default="best", help="Checkpoint name")
    reason.add_argument(
        "--reasoner",
        dest="reasoners",
        action="append",
        type=Path,
        default=[],
        help="Reasoner YAML file, repeatable; defaults to every calibrated reasoner",
    )
    return parser


def setup_logging(settings: Settings) -> None:
    try:
        level = getattr(logging, settings.log_level.upper())
    except AttributeError:
        level = logging.INFO

    logging.basicConfig(
        level=level,
        # this adds the file and line number, quite useful
        format="[%(asctime)s] p%(process)s:t%(thread)d %(pathname)s:%(lineno)d:%(funcName)s %(levelname)s - %(message)s",
    )
    # basicConfig only applies once per process, tests call main repeatedly
    logging.root.setLevel(level=level)


def _settings(args: argparse.Namespace) -> Settings:
    overrides = {}
    if "out_dir" in args:
        overrides["out_dir"] = args.out_dir
    if "log_level" in args:
        overrides["log_level"] = args.log_level
    return get_settings().model_copy(update=overrides)


def run(args: argparse.Namespace) -> int:
    settings = _settings(args)
    setup_logging(settings)
    LOGGER.debug("Got settings: %r", settings)

    config = load_config(
        args.config, seed=getattr(args, "seed", None), deterministic=getattr(args, "deterministic", False)
    )
    ctx = RunContext(
        config=config,
        settings=settings,
        storage=get_storage(settings, rebuild_storage=True),
        backend=get_backend(settings, rebuild_backend=True),
        metrics=get_run_metrics(),
    )

    if args.command == "gen-data":
        cmd_gen_data(ctx)
    elif args.command == "train":
        cmd_train(ctx)
    elif args.command == "calibrate":
        cmd_calibrate(ctx, args.checkpoint)
    elif args.command == "evaluate":
        cmd_evaluate(ctx, args.checkpoint)
    elif args.command == "reason":
        cmd_reason(ctx, args.checkpoint, args.images, args.reasoners)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if "config" not in args:
        parser.error("the following arguments are required: --config")

    try:
        return run(args)
    except ConfigError as error:
        LOGGER.error(f"Configuration error: {error}")
        print(f"error: {error}", file=sys.stderr)
        return EXIT_USAGE
    except (ReasonersError, OSError) as error:
        LOGGER.exception(f"Command {args.command} failed: {error}")
        print(f"error: {error}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as error:
        LOGGER.exception(f"Unexpected failure in {args.command}: {error}")
        print(f"error: {error}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
