"""Map any exception escaping a management command onto a process exit code."""
from functools import wraps
import logging

from django.core.management.base import CommandError

from vcnode.exceptions import error_codes

logger = logging.getLogger(__name__)


def handle_command_exceptions(f):
    """Wrap a command's `handle` so every exception becomes a `CommandError`."""
    f.command_exceptions_handled = True

    @wraps(f)
    def safe_func(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except CommandError:
            raise
        except Exception as e:
            logger.debug("command failed", exc_info=True)
            _raise_command_error(e)
    return safe_func


def _raise_command_error(e):
    """Raises a fixed exit code and message for an error."""
    returncode = error_codes.get_error_code(e)
    raise CommandError(e.__class__.__name__ + ": " + str(e), returncode=returncode) from e
