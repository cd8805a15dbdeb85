import argparse
import sys
from typing import List, Optional

from . import config


class CaseInsensitiveChoices:
    """Case-insensitive argument choice validator for argparse."""

    def __init__(self, choices: List[str]) -> None:
        """
        Initialize with a list of valid choices.

        Args:
            choices: List of valid choice strings
        """
        self.choices = choices
        self.normalized = {c.lower(): c for c in choices}

    def __call__(self, value: str) -> str:
        """
        Validate and normalize the input value.

        Raises:
            argparse.ArgumentTypeError: If value is not a valid choice
        """
        key = value.lower()
        if key in self.normalized:
            return self.normalized[key]
        raise argparse.ArgumentTypeError(
            f"invalid choice: {value} (choose from {', '.join(self.choices)})"
        )


def _non_negative_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"not an integer: {value}") from err
    if number < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {number}")
    return number


def _add_general_arguments(parser: argparse.ArgumentParser) -> None:
    """Add general command-line arguments to the parser."""
    general_opts = parser.add_argument_group("General Options")
    general_opts.add_argument(
        "-d",
        "--debug",
        action="store_true",
        help="Enable debug mode for detailed logs.",
    )
    general_opts.add_argument(
        "-q",
        "--quiet",
        action="store_true",
        help="Only print results, warnings and errors; hide progress bars.",
    )
    general_opts.add_argument(
        "-v", "--version", action="store_true", help="Display version information."
    )


def _add_experiment_arguments(parser: argparse.ArgumentParser) -> None:
    """Add experiment configuration arguments to the parser."""
    experiment_opts = parser.add_argument_group("Experiment Options")
    experiment_opts.add_argument(
        "-c",
        "--config",
        type=str,
        help="JSON experiment configuration (default: built-in preset).",
    )
    experiment_opts.add_argument(
        "-o",
        "--out",
        type=str,
        help=f"Output directory (default: {config.DEFAULT_OUTPUT_DIRECTORY}).",
    )
    experiment_opts.add_argument(
        "-s",
        "--seed",
        type=_non_negative_int,
        help="Random seed, overrides rng_seed of the configuration.",
    )


def _add_command_arguments(parser: argparse.ArgumentParser) -> None:
    """Add one subparser per pipeline stage."""
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")

    simulate = commands.add_parser("simulate", help="Simulate scheduled measurements.")
    simulate.add_argument(
        "--export-matrices",
        action="store_true",
        help="Also write S, its pseudoinverse and G as CSV.",
    )

    calibrate = commands.add_parser(
        "calibrate", help="Retrieve delays, estimate skews and calibrate a measurement CSV."
    )
    calibrate.add_argument(
        "-i", "--input", required=True, type=str, help="Measurement CSV to calibrate."
    )

    localize = commands.add_parser(
        "localize", help="Estimate the listener position from a calibrated CSV."
    )
    localize.add_argument(
        "-i", "--input", required=True, type=str, help="Calibrated CSV to localize."
    )

    commands.add_parser("bound", help="Compute the HCRB error ellipse of the listener.")

    reproduce = commands.add_parser(
        "reproduce", help="Run a figure experiment and check its acceptance thresholds."
    )
    reproduce.add_argument(
        "figure",
        type=CaseInsensitiveChoices(list(config.SUPPORTED_FIGURES)),
        help=f"One of {', '.join(config.SUPPORTED_FIGURES)}.",
    )


def _handle_version() -> None:
    """Handle version information display."""
    print(f"schedloc v.{config.VERSION}" if config.VERSION else "schedloc (not installed)")
    sys.exit(0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="schedloc",
        description="Schedule-based passive self-localization: simulate, calibrate "
        "and localize scheduled UWB measurements, and compare against the HCRB.",
    )
    _add_general_arguments(parser)
    _add_experiment_arguments(parser)
    _add_command_arguments(parser)
    return parser


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Parse command-line arguments for schedloc.

    Args:
        argv: Arguments without the program name, sys.argv[1:] when None

    Returns:
        Parsed command-line arguments
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.version:
        _handle_version()

    if args.command is None:
        parser.print_help()
        sys.exit(config.EXIT_CONFIG_ERROR)

    return args


if __name__ == "__main__":
    pass
