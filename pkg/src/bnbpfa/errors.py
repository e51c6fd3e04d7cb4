"""Exception hierarchy shared across the package."""


class BnbPfaError(Exception):
    """Base class for all package errors."""


class DomainError(BnbPfaError, ValueError):
    """Argument outside the mathematical domain of a function or sampler."""


class ModelDegeneracyError(BnbPfaError, FloatingPointError):
    """A positive observed count has zero modelled rate."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class NumericError(BnbPfaError, ArithmeticError):
    """Quadrature or iterative numerics failed to converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DataError(BnbPfaError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(BnbPfaError, ValueError):
    """Invalid experiment configuration."""
