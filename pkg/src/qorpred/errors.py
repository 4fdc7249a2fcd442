"""Exception hierarchy shared across the package."""


class QorError(Exception):
    """Base class for all package errors."""


class ShapeError(QorError, ValueError):
    pass


class ParameterError(QorError, ValueError):
    pass


class ContractError(QorError, ValueError):
    """A caller broke an operation's precondition (e.g. non-scalar loss)."""


class DegenerateBatchError(QorError, ValueError):
    pass


class EmptySegmentError(QorError, ValueError):
    pass


class IdRangeError(QorError, IndexError):
    pass


class GraphFormatError(QorError, ValueError):
    """Graph file could not be parsed. ``line`` is 1-based, or None."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GraphInvariantError(QorError, ValueError):
    pass


class AcyclicityError(GraphInvariantError):
    pass


class InDegreeError(GraphInvariantError):
    pass


class TokenError(QorError, ValueError):
    """Unknown optimization token; carries the offending token and position."""

    def __init__(self, token, position, message=None):
        self.token = token
        self.position = position
        super().__init__(message or f"unknown token {token!r} at position {position}")


class CorpusFormatError(QorError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(QorError, ValueError):
    pass


class BundleFormatError(QorError, ValueError):
    pass


class FingerprintMismatchError(BundleFormatError):
    pass


class DivergenceError(QorError, RuntimeError):
    pass


class CapabilityError(QorError, RuntimeError):
    """An optional external capability (e.g. a synthesis tool) is unavailable."""


class ExternalToolError(QorError, RuntimeError):
    pass


class ToolOutputError(ExternalToolError):
    pass
