"""Exception hierarchy shared across the package."""


class RootGuardError(Exception):
    """Base class for every error raised by rootguard."""


class DomainError(RootGuardError, ValueError):
    """A value lies outside its declared domain."""

    def __init__(self, message, value=None, bounds=None):
        super().__init__(message)
        self.value = value
        self.bounds = bounds


class EvaluationError(RootGuardError, ArithmeticError):
    """A target or derived formula could not be evaluated (singularity, non-finite input)."""

    def __init__(self, message, root=None):
        super().__init__(message)
        self.root = root


class ConfigError(RootGuardError, ValueError):
    pass


class SolverError(RootGuardError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ProtocolError(RootGuardError, RuntimeError):
    """A session was asked to do something its turn protocol forbids."""


class RequestError(RootGuardError, KeyError):
    pass


class MetricError(RootGuardError, ValueError):
    pass


class SchemaError(RootGuardError, ValueError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class ParseError(RootGuardError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column
