"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DivergenceError -> 3, ConvergenceError -> 4.
"""


class NcsimError(Exception):
    """Base class for all package errors."""


class ConfigError(NcsimError, ValueError):
    """Bad configuration value or malformed config file."""


class InvalidCovarianceError(NcsimError, ValueError):
    """A matrix that must be symmetric PSD is not."""


class DimensionError(NcsimError, ValueError):
    """Inconsistent matrix/vector dimensions or a singular subproblem."""


class NumericError(NcsimError, RuntimeError):
    """Non-finite values, broken conjugate symmetry, or quadrature failure."""


class ConvergenceError(NcsimError, RuntimeError):
    """An iterative solver failed to converge; carries diagnostics."""

    def __init__(self, msg, *, iterations=None, residual=None, history=None):
        super().__init__(msg)
        self.iterations = iterations
        self.residual = residual
        self.history = history


class DivergenceError(NcsimError, RuntimeError):
    """Closed-loop state blew up; carries the slot index."""

    def __init__(self, msg, *, slot=None, norm=None):
        super().__init__(msg)
        self.slot = slot
        self.norm = norm
