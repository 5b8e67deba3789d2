"""Exception hierarchy.

Three families map onto the CLI exit codes: configuration problems (2),
bad input data (3) and numerical failures (4).
"""

from __future__ import annotations


class RobustMVPError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(RobustMVPError, ValueError):
    exit_code = 2


class InvalidSpec(ConfigError):
    pass


class InvalidTau(ConfigError):
    pass


class InvalidCTau(ConfigError):
    pass


class DataError(RobustMVPError, ValueError):
    exit_code = 3


class NonFinite(DataError):
    """A NaN or infinite entry; ``row`` and ``col`` locate the first one."""

    def __init__(self, row: int, col: int, message: str | None = None):
        self.row = row
        self.col = col
        super().__init__(message or f"non-finite value at (row={row}, col={col})")


class DimensionMismatch(DataError):
    pass


class UnorderedIndex(DataError):
    pass


class LengthMismatch(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class TooFewRebalances(DataError):
    pass


class NumericalError(RobustMVPError, ArithmeticError):
    exit_code = 4


class EigFailure(NumericalError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class SingularCovariance(NumericalError):
    pass


class NoFeasibleCTau(NumericalError):
    """No grid value gave a positive definite thresholded matrix on every fold.

    The full cross-validation curve is attached as ``curve`` so callers can
    still report it.
    """

    def __init__(self, message: str, curve=None):
        super().__init__(message)
        self.curve = curve


class BacktestNodeError(RobustMVPError):
    """An estimator failed at a decision node; wraps the original error."""

    def __init__(self, node: int, label, strategy: str, cause: Exception):
        self.node = node
        self.label = label
        self.strategy = strategy
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 4)
        super().__init__(
            f"strategy {strategy!r} failed at decision node {node} ({label}): {cause}"
        )
