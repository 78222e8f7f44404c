"""Exception hierarchy shared across the package.

Each error class maps onto one CLI exit code so scripted callers can
distinguish bad input from blown-up physics from unreadable files.
"""


class CellflowError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(CellflowError):
    """Invalid or inconsistent run configuration (exit code 2)."""

    exit_code = 2

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NumericalError(CellflowError):
    """Detected instability or non-convergence (exit code 3)."""

    exit_code = 3


class StorageError(CellflowError):
    """Unreadable, corrupt, or unwritable on-disk artifacts (exit code 4)."""

    exit_code = 4
