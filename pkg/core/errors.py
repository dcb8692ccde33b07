"""Exception hierarchy shared by the numerical core and the CLI.

The CLI maps these onto exit codes (see ``cli/utils/error_handlers.py``):
invalid input gives 2, numerical failures give 3.
"""

from typing import List, Optional


class ShearStabError(Exception):
    """Base class for all errors raised by shearstab."""


class InvalidArgumentError(ShearStabError, ValueError):
    """An argument is outside the domain an operation accepts."""


class SolverFailureError(ShearStabError, RuntimeError):
    """A collocation system turned out numerically singular."""

    def __init__(self, message: str, nu: float, k: float, lam: float):
        super().__init__(f"{message} (nu={nu:g}, k={k:g}, lambda={lam:g})")
        self.nu = nu
        self.k = k
        self.lam = lam


class BlowUpError(ShearStabError, RuntimeError):
    """A time integration produced non-finite values."""

    def __init__(self, time: float, k: Optional[int] = None):
        where = f" in mode k={k}" if k is not None else ""
        super().__init__(f"Non-finite state at t={time:g}{where}")
        self.time = time
        self.k = k


class FitUnavailableError(ShearStabError):
    """Too few usable points for a power-law fit."""


class ConfigParseError(ShearStabError):
    """An experiment file is not well-formed TOML or JSON."""

    def __init__(self, path: str, line: Optional[int], detail: str):
        location = f"{path}:{line}" if line is not None else path
        super().__init__(f"Cannot parse {location}: {detail}")
        self.path = path
        self.line = line


class ConfigValidationError(ShearStabError):
    """An experiment description violates one or more physical constraints."""

    def __init__(self, clauses: List[str]):
        super().__init__("Invalid experiment: " + "; ".join(clauses))
        self.clauses = list(clauses)


class ReportWriteError(ShearStabError, OSError):
    """Writing an output file failed."""

    def __init__(self, path: str, detail: str):
        super().__init__(f"Cannot write {path}: {detail}")
        self.path = path
