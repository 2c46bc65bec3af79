"""Exception hierarchy shared by every module."""


class FcticaError(Exception):
    """Base class for all errors raised by the package."""


class DataError(FcticaError, ValueError):
    """Input data is malformed (non-finite entries, wrong shapes)."""


class SingularDesignError(DataError):
    """A least-squares design matrix is rank deficient."""


class InsufficientDataError(DataError):
    """Too few subjects, sessions or samples for the requested estimate."""


class DegenerateCorrelationError(DataError):
    """A correlation was requested for a zero-variance column."""


class NumericalError(FcticaError, ArithmeticError):
    """A numerical invariant broke down (non-PD matrix, negative moment)."""


class ConvergenceError(FcticaError):
    """An iterative procedure diverged."""


class ContainerFormatError(FcticaError, OSError):
    """A matrix container file is corrupt or of an unsupported version."""


class ConfigError(FcticaError, ValueError):
    """A run configuration is invalid."""
