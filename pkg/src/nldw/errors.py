"""Exception types shared across the package."""


class NldwError(Exception):
    """Base class for every error raised by this package."""


class NonConvergent(NldwError):
    pass


class OutOfRange(NldwError):
    pass


class DomainTooSmall(NldwError):
    pass


class GridMismatch(NldwError):
    pass


class PositivityViolation(NldwError):
    pass


class InsufficientPoints(NldwError):
    pass


class InsufficientSnapshots(NldwError):
    pass


class HypothesisViolation(NldwError):
    pass


class SolverOverflow(NldwError):
    """Raised by a single time step whose result is not finite."""


class ConfigParseError(NldwError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class ConfigValidationError(NldwError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
