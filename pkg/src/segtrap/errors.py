"""Exception taxonomy.

Library code raises these and never calls sys.exit; the CLI maps them to
process exit codes (see segtrap.cli).
"""

from __future__ import annotations

__all__ = [
    "SegtrapError",
    "InvalidInputError",
    "ParseError",
    "NoWellError",
    "InfeasibleError",
    "IntegrationError",
    "EstimationError",
    "FitError",
    "ConfigError",
]


class SegtrapError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(SegtrapError):
    """An argument is malformed or outside the supported domain."""


class ParseError(SegtrapError):
    """A data file could not be parsed."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f" [{path}"
            where += f":{line}]" if line is not None else "]"
        elif line is not None:
            where += f" [line {line}]"
        super().__init__(message + where)


class NoWellError(SegtrapError):
    """The potential has no confining minimum in the analysis window."""


class InfeasibleError(SegtrapError):
    """A voltage solve cannot meet the well tolerances within the DAC limits.

    Attributes carry what the best feasible solution actually achieved so the
    caller can report how far off it was.
    """

    def __init__(
        self,
        message: str,
        achieved_omega: float | None = None,
        achieved_z_min: float | None = None,
        time_index: int | None = None,
    ):
        self.achieved_omega = achieved_omega
        self.achieved_z_min = achieved_z_min
        self.time_index = time_index
        if time_index is not None:
            message += f" (waveform row {time_index})"
        super().__init__(message)


class IntegrationError(SegtrapError):
    """A trajectory integration failed or blew up."""


class EstimationError(SegtrapError):
    """An estimator could not produce a result from the given data."""


class FitError(SegtrapError):
    """A least-squares fit is degenerate or otherwise unsolvable."""


class ConfigError(SegtrapError):
    """A configuration file is invalid."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)
