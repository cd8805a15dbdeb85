"""
schedloc main entry point.
"""

import sys
import logging
from typing import NoReturn

from .config import EXIT_CONFIG_ERROR, EXIT_INTERRUPTED
from .entry import schedloc


def main() -> NoReturn:
    """
    Main entry point for the schedloc application.

    Handles graceful shutdown on keyboard interrupt and logs unexpected
    errors with their traceback.
    """
    try:
        sys.exit(schedloc())
    except KeyboardInterrupt:
        print("\n\nOperation cancelled by user.", file=sys.stderr)
        sys.exit(EXIT_INTERRUPTED)  # Standard exit code for SIGINT
    except Exception as err:
        logging.error("Unexpected error: %s", err, exc_info=True)
        print(f"\nAn unexpected error occurred: {err}", file=sys.stderr)
        print("Please check the logs for more details.", file=sys.stderr)
        sys.exit(EXIT_CONFIG_ERROR)


if __name__ == "__main__":
    main()
