"""Exception hierarchy shared by all backends."""


class NuFlavorError(Exception):
    """Base class for package errors."""


class InvalidParameterError(NuFlavorError, ValueError):
    pass


class UnsupportedSizeError(InvalidParameterError):
    """Odd particle counts: the SWAP network needs an even register."""


class ShapeError(NuFlavorError, ValueError):
    pass


class ResourceLimitError(NuFlavorError, MemoryError):
    """Requested system is too large for the chosen backend."""


class DegenerateScheduleError(NuFlavorError):
    """A random schedule never couples oppositely polarized neutrinos (g_R = 0)."""


class IntegrationDivergedError(NuFlavorError, FloatingPointError):
    pass


class FitFailureError(NuFlavorError, RuntimeError):
    pass


class InvalidSeriesError(NuFlavorError, ValueError):
    pass


class ConfigError(NuFlavorError, ValueError):
    """Invalid experiment configuration; ``key`` names the offending field."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class NumericalError(NuFlavorError, ArithmeticError):
    """Linear-algebra failure inside a backend (e.g. an SVD that did not converge)."""
