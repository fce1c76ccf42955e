"""Exception types shared across the package.

Each class carries the process exit code the command line maps it to.
"""


class KkmError(Exception):
    exit_code = 4


class InputError(KkmError, ValueError):
    """Bad arguments or data shapes."""

    exit_code = 2


class FormatError(InputError):
    """A data file could not be parsed."""


class CapacityError(KkmError):
    """No batch count fits the memory budget."""

    exit_code = 3

    def __init__(self, message: str, min_footprint: int | None = None):
        super().__init__(message)
        self.min_footprint = min_footprint


class StateError(KkmError, RuntimeError):
    """An internal invariant was violated during a run."""

    exit_code = 4
