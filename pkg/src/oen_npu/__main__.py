"""
Main entry point for oen-npu.
"""

import argparse
import logging
import sys
from typing import List, Optional, Tuple

from dotenv import load_dotenv
from pydantic import ValidationError

from .atoms.shared.config import ProjectConfig, apply_overrides, config_to_dict, load_config
from .atoms.shared.data_types import ConfigError, NpuError
from .atoms.shared.presets import list_presets, project_preset
from .atoms.shared.utils import (
    DEFAULT_HARDWARE_PRESET,
    DEFAULT_WORKLOAD_PRESET,
    get_default_config_path,
    get_default_log_level,
)
from .cli import COMMANDS, RANDOMIZED_COMMANDS, CommandResult, RunContext, add_schema_arguments, parse_schema, run_command
from .molecules.reports import RunManifest, csv_text, json_text, write_csv, write_json, write_manifest

# Load environment variables
load_dotenv()

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s [%(levelname)s] %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S'
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad command-line input: unknown preset, bad override path, invalid flag value."""


def _common_arguments() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    presets = list_presets()
    common.add_argument("--config", help="JSON config file (default: $OEN_NPU_CONFIG)")
    common.add_argument(
        "--preset",
        choices=presets["hardware"],
        help=f"Hardware preset used when no config file is given (default: {DEFAULT_HARDWARE_PRESET})",
    )
    common.add_argument(
        "--workload",
        choices=presets["workload"],
        help=f"Workload preset used when no config file is given (default: {DEFAULT_WORKLOAD_PRESET})",
    )
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="PATH=VALUE",
        help="Override a config field, e.g. hardware.clocking.f_clk_hz=1e9 (repeatable)",
    )
    common.add_argument("--seed", type=int, help="Seed (required by pixel, mmm and noise-eval)")
    common.add_argument("--threads", type=int, help="Maximum worker threads")
    common.add_argument("--output", help="Output file (default: stdout, no manifest)")
    common.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        default=None,
        help="Logging level (default: $OEN_NPU_LOG_LEVEL or INFO)",
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    """Top-level parser with one subparser per command."""
    common = _common_arguments()
    parser = argparse.ArgumentParser(
        prog="oen-npu",
        description="oen-npu - performance model and simulator of an optoelectronic CIS-based NPU",
    )
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (schema, _, help_text) in COMMANDS.items():
        sub = subparsers.add_parser(name, parents=[common], help=help_text, description=help_text)
        add_schema_arguments(sub, schema)
    return parser


def resolve_config(args: argparse.Namespace) -> Tuple[ProjectConfig, Optional[str]]:
    """
    Config from --config (or the environment), otherwise from presets, then overrides.

    Raises:
        ConfigError: If the config file cannot be loaded
        UsageError: On a bad override
    """
    path = args.config or get_default_config_path()
    if path:
        if args.preset or args.workload:
            logger.warning("--preset/--workload are ignored when a config file is given")
        config = load_config(path)
    else:
        config = project_preset(args.preset or DEFAULT_HARDWARE_PRESET, args.workload or DEFAULT_WORKLOAD_PRESET)
    if args.overrides:
        try:
            config = apply_overrides(config, args.overrides)
        except ConfigError as e:
            raise UsageError(str(e))
    return config, path


def emit(result: CommandResult, output: Optional[str], manifest: RunManifest) -> List[str]:
    """
    Write a command result to a file (with manifests) or to stdout.

    Returns:
        Paths written
    """
    if output is None:
        text = json_text(result.data) if result.format == "json" else csv_text(result.data, result.columns)
        sys.stdout.write(text)
        sys.stdout.flush()
        return []

    written = []
    if result.format == "json":
        written.append(str(write_json(output, result.data)))
    else:
        written.append(str(write_csv(output, result.data, result.columns)))
    for suffix, data in result.sidecars.items():
        written.append(str(write_json(output + suffix, data)))
    written.extend(result.files)
    for path in written:
        write_manifest(path, manifest.model_copy(update={"outputs": written}))
    return written


def run(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, run one command and emit its output.

    Returns:
        Exit code: 0 success, 1 validation or domain failure, 2 usage error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    # Set logging level
    logging.getLogger().setLevel(getattr(logging, args.log_level or get_default_log_level()))

    if args.command in RANDOMIZED_COMMANDS and args.seed is None:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"oen-npu {args.command}: error: --seed is required\n")
        return EXIT_USAGE

    schema = COMMANDS[args.command][0]
    try:
        options = parse_schema(schema, args)
    except ValidationError as e:
        sys.stderr.write(f"oen-npu {args.command}: error: {e}\n")
        return EXIT_USAGE

    try:
        config, config_path = resolve_config(args)
    except UsageError as e:
        sys.stderr.write(f"oen-npu {args.command}: error: {e}\n")
        return EXIT_USAGE
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_FAILURE

    ctx = RunContext(config=config, config_path=config_path, seed=args.seed, threads=args.threads)
    try:
        result = run_command(args.command, options, ctx)
    except (NpuError, ValueError) as e:
        sys.stderr.write(f"oen-npu {args.command}: {e}\n")
        return EXIT_FAILURE

    manifest = RunManifest(
        subcommand=args.command,
        arguments=options.model_dump(mode="json"),
        seed=args.seed,
        config_path=config_path,
        config=config_to_dict(config),
    )
    emit(result, args.output, manifest)
    if result.summary:
        logger.info(result.summary)
    return result.exit_code


def main():
    """
    Main entry point for oen-npu.
    """
    sys.exit(run())


if __name__ == "__main__":
    main()
