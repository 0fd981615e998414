"""Exception and warning types shared across the package."""


class MetaAnalysisError(Exception):
    """Base class for errors raised by predint."""

    code = "error"


class DomainError(MetaAnalysisError, ValueError):
    """An input lies outside the domain of the requested method."""

    code = "domain_error"


class DataError(MetaAnalysisError, ValueError):
    """Malformed or inconsistent input data (CSV parsing, validation)."""

    code = "data_error"


class NumericalError(MetaAnalysisError, ArithmeticError):
    """A numerical procedure failed to reach its accuracy contract."""

    code = "numerical_error"


class RangeError(NumericalError):
    """A root is not bracketed by the configured search interval."""

    code = "range_error"


class ConvergenceWarning(RuntimeWarning):
    """An iterative estimator stopped before meeting its tolerance."""


class MonteCarloWarning(RuntimeWarning):
    """Bootstrap settings likely to give noisy limits."""
