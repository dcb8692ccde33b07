"""Utility functions mapping failures onto exit codes and log lines."""

import logging

from core.errors import (
    BlowUpError,
    ConfigParseError,
    ConfigValidationError,
    FitUnavailableError,
    InvalidArgumentError,
    ReportWriteError,
    SolverFailureError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_INVALID_INPUT = 2
EXIT_NUMERICAL_FAILURE = 3

INPUT_ERRORS = (ConfigParseError, ConfigValidationError, InvalidArgumentError, ReportWriteError)
NUMERICAL_ERRORS = (SolverFailureError, BlowUpError, FitUnavailableError)


def exit_code_for(error: Exception) -> int:
    """Exit code for an exception raised while running a subcommand.

    Args:
        error: The exception that aborted the run

    Returns:
        2 for invalid input or unwritable output, 3 for numerical failures.
        Anything unexpected is re-raised by the caller, not mapped here.
    """
    if isinstance(error, INPUT_ERRORS):
        return EXIT_INVALID_INPUT
    if isinstance(error, NUMERICAL_ERRORS):
        return EXIT_NUMERICAL_FAILURE
    raise error


def report_error(error: Exception) -> int:
    """Log a user-facing message for ``error`` and return its exit code.

    Args:
        error: The exception that aborted the run
    """
    code = exit_code_for(error)
    if isinstance(error, ConfigValidationError):
        logger.error("Invalid experiment configuration:")
        for clause in error.clauses:
            logger.error(f"  - {clause}")
    elif code == EXIT_NUMERICAL_FAILURE:
        logger.error(f"✗ Numerical failure: {error}")
    else:
        logger.error(f"✗ {error}")
    return code


def report_checks(checks: dict) -> int:
    """Log failed checks and return 0 when all passed, 1 otherwise."""
    failed = sorted(name for name, ok in checks.items() if not ok)
    for name in failed:
        logger.warning(f"✗ Check failed: {name}")
    if failed:
        return EXIT_CHECKS_FAILED
    logger.info(f"✓ All {len(checks)} checks passed")
    return EXIT_OK
