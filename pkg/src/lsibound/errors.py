"""Exception hierarchy.

The CLI maps these onto exit codes: input/config/format problems exit 1,
numerical and constraint failures exit 2.
"""


class LsiBoundError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidInputError(LsiBoundError, ValueError):
    pass


class ConfigError(InvalidInputError):
    pass


class FormatError(InvalidInputError):
    """A data file does not follow its declared binary layout."""


class ParseError(InvalidInputError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InsufficientDataError(InvalidInputError):
    def __init__(self, message, label=None):
        super().__init__(message)
        self.label = label


class SizeLimitError(InvalidInputError):
    pass


class NumericalError(LsiBoundError, ArithmeticError):
    pass


class EvaluationError(NumericalError):
    """A function evaluated to a negative or non-finite value where that is not allowed."""

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class ConstraintViolation(NumericalError):
    """A theorem precondition on lambda (or similar) is violated."""


class DivergenceError(NumericalError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
