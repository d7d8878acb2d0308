"""Exception types raised across the package."""


class WulffFlowError(Exception):
    """Base class for all package errors."""


class ZeroDirection(WulffFlowError, ValueError):
    pass


class NonFinite(WulffFlowError, FloatingPointError):
    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class OutOfGuardRegion(WulffFlowError):
    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class UnsupportedDegree(WulffFlowError, ValueError):
    pass


class UnsupportedOrder(WulffFlowError, ValueError):
    pass


class ProjectionDiverged(WulffFlowError):
    pass


class NotStarShaped(WulffFlowError):
    pass


class ParseError(WulffFlowError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class NotClosed(WulffFlowError):
    def __init__(self, message, edge=None):
        super().__init__(message)
        self.edge = edge


class DegenerateElement(WulffFlowError):
    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class ZeroNormal(WulffFlowError):
    pass


class SizeMismatch(WulffFlowError, ValueError):
    pass


class TimeMismatch(WulffFlowError, ValueError):
    pass


class NotConverged(WulffFlowError):
    """CG did not reach the tolerance; carries the best iterate."""

    def __init__(self, message, x=None, iterations=None, residual=None):
        super().__init__(message)
        self.x = x
        self.iterations = iterations
        self.residual = residual


class IndefiniteDetected(WulffFlowError):
    pass


class IncompleteHistory(WulffFlowError):
    pass


class OffSurface(WulffFlowError):
    pass


class PastBlowup(WulffFlowError):
    pass


class ConfigError(WulffFlowError, ValueError):
    pass
