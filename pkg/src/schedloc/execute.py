import logging
from argparse import Namespace
from typing import Callable, Dict

from .action import bound, calibrate, localize, reproduce, simulate
from .experiment import ExperimentConfig


# Action mapping for the subcommands
ACTION_MAP: Dict[str, Callable[[ExperimentConfig, Namespace], None]] = {
    "simulate": simulate,
    "calibrate": calibrate,
    "localize": localize,
    "bound": bound,
    "reproduce": reproduce,
}


def _validate_command(command: str) -> None:
    if command not in ACTION_MAP:
        valid_actions = ", ".join(ACTION_MAP.keys())
        raise ValueError(f"Invalid command '{command}'. Valid commands: {valid_actions}")


def execute(config: ExperimentConfig, arguments: Namespace) -> None:
    """
    Run the action of the parsed subcommand.

    Args:
        config: Validated experiment configuration
        arguments: Parsed command-line arguments
    """
    _validate_command(arguments.command)
    logging.debug("Executing %s with configuration %s", arguments.command, config.source)
    ACTION_MAP[arguments.command](config, arguments)
    logging.debug("Finished %s", arguments.command)
