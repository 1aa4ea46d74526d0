"""
Logging Setup
Structured JSON logging for batch runs and colored console logging for
interactive use.
"""

import logging
import sys
from typing import Optional

import colorlog
from pythonjsonlogger import jsonlogger

_HANDLER_NAME = "ganinvert"

JSON_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"
COLOR_FORMAT = "%(log_color)s%(asctime)s %(levelname)-8s%(reset)s %(name)s: %(message)s"


def _build_formatter(fmt: str) -> logging.Formatter:
    if fmt == "json":
        return jsonlogger.JsonFormatter(JSON_FORMAT, rename_fields={"levelname": "level"})
    if fmt == "color":
        return colorlog.ColoredFormatter(
            COLOR_FORMAT,
            datefmt="%H:%M:%S",
            log_colors={
                "DEBUG": "cyan",
                "INFO": "green",
                "WARNING": "yellow",
                "ERROR": "red",
                "CRITICAL": "bold_red",
            },
        )
    return logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")


def setup_logging(level: str = "INFO", fmt: str = "color", stream: Optional[object] = None) -> logging.Logger:
    """
    Install the package handler on the root logger.

    Calling this again replaces the previous handler instead of stacking.

    Args:
        level: Log level name
        fmt: "json", "color" or "plain"
        stream: Output stream (stderr by default)

    Returns:
        logging.Logger: The configured root logger
    """
    root = logging.getLogger()
    root.setLevel(level.upper())

    for existing in list(root.handlers):
        if existing.get_name() == _HANDLER_NAME:
            root.removeHandler(existing)

    handler = logging.StreamHandler(stream or sys.stderr)
    handler.set_name(_HANDLER_NAME)
    handler.setFormatter(_build_formatter(fmt))
    root.addHandler(handler)

    # torch / matplotlib chatter
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    return root
