"""
ganinvert Command-Line Entry Point
Parses arguments, configures logging and maps failures to exit codes.
"""

import logging
import sys
from typing import List, Optional

from ganinvert.cli.commands import build_parser
from ganinvert.config.settings import get_settings
from ganinvert.middleware.error_handler import handle_cli_error
from ganinvert.middleware.logging import setup_logging

logger = logging.getLogger(__name__)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one ganinvert command.

    Args:
        argv: Arguments without the program name (sys.argv[1:] by default)

    Returns:
        int: Process exit code (0 on success)
    """
    args = build_parser().parse_args(argv)
    try:
        settings = get_settings()
        setup_logging(args.log_level or settings.log_level, args.log_format or settings.log_format)
        logger.debug(f"Command: {args.command}")
        return args.handler(args)
    except BaseException as e:  # noqa: B902
        if isinstance(e, SystemExit):
            raise
        return handle_cli_error(e)


if __name__ == "__main__":
    sys.exit(main())
