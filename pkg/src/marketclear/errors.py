"""Exception and warning types shared across the package.

Every error carries an ``exit_code`` used by the command-line front end:
2 for bad input, 3 for numerical failures.
"""


class MarketClearError(Exception):
    exit_code = 3

    def payload(self):
        return {"error": type(self).__name__, "message": str(self)}


class InputError(MarketClearError):
    exit_code = 2


class ParseError(InputError):
    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")

    def payload(self):
        return {**super().payload(), "line": self.line, "reason": self.reason}


class ValidationError(InputError):
    pass


class EmptyFreeSet(InputError):
    pass


class BoundsError(InputError):
    pass


class DimensionError(InputError):
    pass


class ModelMissingError(InputError):
    pass


class DatasetMismatchError(InputError):
    pass


class SingularityError(MarketClearError):
    pass


class InfeasibleError(MarketClearError):
    pass


class UnboundedError(MarketClearError):
    pass


class IterationLimitError(MarketClearError):
    pass


class AssumptionViolatedError(MarketClearError):
    """A free generator ended at or beyond one of its output limits."""


class OverdeterminedError(MarketClearError):
    pass


class NumericalError(MarketClearError):
    pass


class DomainError(MarketClearError):
    pass


class DivergenceError(MarketClearError):
    pass


class InfeasibilityRateError(MarketClearError):
    pass


class DegeneracyWarning(UserWarning):
    pass


class ImbalanceWarning(UserWarning):
    pass
