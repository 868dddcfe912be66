"""Exception taxonomy shared across the package."""


class TransyncError(Exception):
    """Base class for all package errors."""


class ParseError(TransyncError):
    """A configuration or data file is malformed."""


class ValidationError(TransyncError):
    """A domain object violates one of its invariants."""


class ConfigError(TransyncError):
    """A distribution or solver configuration value is out of range."""


class FormatError(TransyncError):
    """A serialized container has the wrong version or is corrupt."""


class MissingDataError(TransyncError):
    """A scenario lacks a value the evaluator needs (e.g. a segment running time)."""


class InfeasibleError(TransyncError):
    """No feasible assignment exists; should be unreachable when the
    next-horizon sentinel is enabled."""


class SizeError(TransyncError):
    """A combinatorial search exceeds its enumeration budget."""


class DivisionError(TransyncError, ArithmeticError):
    """A ratio metric is undefined because its denominator is zero."""
