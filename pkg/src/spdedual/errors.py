"""Exception hierarchy shared by all modules."""


class SpdeDualError(Exception):
    """Base class for errors raised by the toolkit."""


class GridError(SpdeDualError, ValueError):
    pass


class CoefficientError(SpdeDualError, ValueError):
    pass


class ControlError(SpdeDualError, ValueError):
    pass


class FeasibilityError(SpdeDualError, ValueError):
    """A candidate dual pair violates the initial, boundary or adjoint constraints."""


class SolverError(SpdeDualError, RuntimeError):
    """A linear solve or iteration failed numerically."""


class CatalogError(SpdeDualError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigError(SpdeDualError, ValueError):
    pass
