"""Exception hierarchy.

Two families: ``ConfigError`` for invalid user input (mapped to exit status 2
by the command line) and ``NumericalError`` for failures of the numerics
themselves (exit status 3).
"""


class EmprefError(Exception):
    """Base class for all package errors."""


class ConfigError(EmprefError, ValueError):
    """Invalid arguments or configuration."""


class NumericalError(EmprefError, ArithmeticError):
    """A computation could not produce a meaningful number."""


class InvalidGridError(ConfigError):
    """Bad bounds, node count, or non-increasing nodes."""


class LengthMismatchError(ConfigError):
    """Value array does not match the number of grid nodes."""


class GridMismatchError(ConfigError):
    """Two densities that must share a grid do not."""


class AllZeroInputError(ConfigError):
    """Cannot normalize a vector without positive entries."""


class NonMonotoneMapError(ConfigError):
    """A transformation is not increasing where it is used."""


class SupportViolationError(NumericalError):
    """KL divergence with ``p > 0`` where ``q == 0``."""


class DegenerateLikelihoodError(NumericalError):
    """Some observation has zero marginal density under the prior."""


class NonPositiveInformationError(NumericalError):
    """Fisher information evaluated to a non-positive number."""


class NoProgressError(NumericalError):
    """Solver step size collapsed before the stopping rule was met."""
