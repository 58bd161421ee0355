"""Command execution wrapper mapping library errors onto exit codes."""

import logging
from collections.abc import Callable
from functools import wraps
from typing import Any, TypeVar

from .errors import MfhcaError, handle_error

T = TypeVar("T")

logger = logging.getLogger(__name__)


def cli_command(func: Callable[..., T]) -> Callable[..., T]:
    """Run a command body, turning any MfhcaError into ``Error: ...`` and its exit code."""

    @wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> T:
        try:
            return func(*args, **kwargs)
        except MfhcaError as e:
            logger.debug("command failed", exc_info=True)
            handle_error(str(e), e.exit_code)

    return wrapper
