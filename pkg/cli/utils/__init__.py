"""Utility functions for the CLI."""

from .error_handlers import (
    EXIT_CHECKS_FAILED,
    EXIT_INVALID_INPUT,
    EXIT_NUMERICAL_FAILURE,
    EXIT_OK,
    report_checks,
    report_error,
)

__all__ = [
    "EXIT_CHECKS_FAILED",
    "EXIT_INVALID_INPUT",
    "EXIT_NUMERICAL_FAILURE",
    "EXIT_OK",
    "report_checks",
    "report_error",
]
