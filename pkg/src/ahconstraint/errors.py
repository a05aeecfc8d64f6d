"""Exception types raised across the package."""


class AHError(Exception):
    """Base class for all package errors."""


class InvalidGeometry(AHError):
    pass


class DegenerateRegion(AHError):
    pass


class NonFinite(AHError):
    pass


class SingularMetric(AHError):
    pass


class UnknownIdentity(AHError):
    pass


class EmptyFamily(AHError):
    pass


class WindowViolation(AHError):
    pass


class SolverDivergence(AHError):
    pass


class WeightOutOfRange(AHError):
    pass


class KindMismatch(AHError):
    pass


class SupportViolation(AHError):
    pass


class InsufficientData(AHError):
    pass


class InsufficientSmoothness(AHError):
    pass


class EquivalenceViolation(AHError):
    pass


class ConfigError(AHError):
    """Base for configuration problems; the CLI maps these to exit code 2."""


class ParseError(ConfigError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnknownKey(ConfigError):
    pass


class RangeError(ConfigError):
    pass


class WindowWarning(UserWarning):
    """Issued instead of WindowViolation when a probe runs outside its window in warn-and-proceed mode."""
