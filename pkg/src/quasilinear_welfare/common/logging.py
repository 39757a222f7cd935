"""Basic logging configuration."""

import logging
import sys

DEFAULT_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)s | %(message)s"
DEFAULT_LEVEL = logging.INFO
ROOT_LOGGER = "quasilinear_welfare"

_configured = False


def setup_logging(level: int = DEFAULT_LEVEL, format_string: str = DEFAULT_FORMAT) -> None:
    """Configure logging for the package.

    Reports are printed to stdout by the CLI, so log records go to stderr.

    Args:
        level: Logging level (default: INFO)
        format_string: Log message format
    """
    global _configured

    root_logger = logging.getLogger(ROOT_LOGGER)
    root_logger.setLevel(level)

    if _configured:
        return

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(format_string))
    root_logger.addHandler(handler)

    _configured = True


def get_logger(name: str) -> logging.Logger:
    """Get a logger instance.

    Args:
        name: Logger name (typically __name__)

    Returns:
        Configured logger instance
    """
    return logging.getLogger(name)
