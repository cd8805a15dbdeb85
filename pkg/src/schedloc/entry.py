import logging
from argparse import Namespace
from typing import List, Optional

from .config import (
    EXIT_ACCEPTANCE_FAILURE,
    EXIT_CONFIG_ERROR,
    EXIT_DATA_ERROR,
    EXIT_SUCCESS,
    VERSION,
    setup_logging,
)
from .execute import execute
from .experiment import ExperimentConfig, load_experiment_config
from .models import AcceptanceFailure, ConfigError, DataError
from .parser import parse_arguments


def _load_config(arguments: Namespace) -> ExperimentConfig:
    """Configuration file, or the figure's preset for reproduce."""
    if arguments.command == "reproduce":
        figure = arguments.figure.lower()
        if arguments.config:
            logging.warning("reproduce ignores --config and uses the %s preset", figure)
        return load_experiment_config(None, figure, arguments.seed, arguments.out)
    return load_experiment_config(arguments.config, "default", arguments.seed, arguments.out)


def schedloc(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point for the schedloc command line.

    Args:
        argv: Arguments without the program name, sys.argv[1:] when None

    Returns:
        Process exit code: 0 success, 1 configuration error, 2 data error,
        3 failed acceptance check
    """
    arguments = parse_arguments(argv)
    setup_logging(debug=arguments.debug, quiet=arguments.quiet)
    logging.debug("schedloc v.%s: %s", VERSION, arguments)

    try:
        config = _load_config(arguments)
        execute(config, arguments)
    except ConfigError as err:
        logging.error("Configuration error: %s", err)
        return EXIT_CONFIG_ERROR
    except DataError as err:
        logging.error("Data error: %s", err)
        return EXIT_DATA_ERROR
    except AcceptanceFailure as err:
        logging.error("Acceptance check failed: %s", err)
        return EXIT_ACCEPTANCE_FAILURE
    return EXIT_SUCCESS


if __name__ == "__main__":
    schedloc()
