"""Exception hierarchy shared across the package."""


class CrashdynError(Exception):
    """Base class for all errors raised by this package."""


class DataError(CrashdynError):
    """Invalid, inconsistent or insufficient input data."""


class UsageError(CrashdynError):
    """Bad command-line arguments or configuration."""


class SimulationError(CrashdynError):
    """A trajectory or ensemble simulation could not be completed."""
