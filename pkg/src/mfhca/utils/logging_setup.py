"""Diagnostic logging for the command line."""

import logging

from rich.console import Console
from rich.logging import RichHandler

LOGGER_NAME = "mfhca"


def setup_logging(verbose: bool = False) -> None:
    """Route the package's log records to stderr through rich."""
    logger = logging.getLogger(LOGGER_NAME)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = RichHandler(
        console=Console(stderr=True),
        show_path=False,
        rich_tracebacks=verbose,
        log_time_format="[%X]",
    )
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    logger.propagate = False
