import logging
from functools import wraps
from typing import Callable, Optional

from .errors import ConfigError, VortexError
from .io import write_failure

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILURE = 2
EXIT_UNEXPECTED = 3


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, VortexError):
        return EXIT_FAILURE
    return EXIT_UNEXPECTED


def record_failures(locate_output: Callable[..., Optional[str]]):
    """Decorator turning raised errors into failure.json plus an exit code.

    locate_output receives the wrapped call's arguments and returns the
    directory the failure record goes to (None to skip writing).
    """

    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except Exception as e:
                code = exit_code_for(e)
                if code == EXIT_UNEXPECTED:
                    logger.exception(f"Unexpected error in {func.__name__}: {e}")
                else:
                    logger.error(f"{type(e).__name__} in {func.__name__}: {e}")
                try:
                    output_dir = locate_output(*args, **kwargs)
                except Exception:
                    output_dir = None
                if output_dir:
                    try:
                        path = write_failure(output_dir, e)
                        logger.info(f"Failure record written to {path}")
                    except OSError as write_error:
                        logger.error(f"Could not write failure record: {write_error}")
                return code

        return wrapper

    return decorator
