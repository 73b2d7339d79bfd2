"""Exception hierarchy.

Validation problems (bad input, violated preconditions) derive from
``ValidationError``; failures of a numerical procedure on otherwise valid
input derive from ``NumericalError``.  The CLI maps them to exit codes 2
and 3.
"""


class LogRiskError(Exception):
    pass


class ValidationError(LogRiskError, ValueError):
    pass


class NumericalError(LogRiskError, ArithmeticError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConflictError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class RankError(NumericalError):
    pass


class IllConditionedError(NumericalError):
    def __init__(self, message, usable_rank=None):
        super().__init__(message)
        self.usable_rank = usable_rank


class DegenerateSampleError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass
