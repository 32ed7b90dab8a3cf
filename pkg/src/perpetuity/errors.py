"""Exception hierarchy shared by every module of the package."""


class PerpetuityError(Exception):
    """Base class for all errors raised by :mod:`perpetuity`."""


class InvalidSpec(PerpetuityError, ValueError):
    """A distribution specification is structurally invalid."""


class InvalidArgument(PerpetuityError, ValueError):
    pass


class UnsupportedRegime(PerpetuityError):
    """The model lies outside |M| <= 1 (power-law tail regime)."""


class DegenerateModel(PerpetuityError):
    """The model cannot be simulated, e.g. |M| = 1 almost surely."""


class TruncationFailure(PerpetuityError):
    pass


class OutOfDomain(PerpetuityError, ValueError):
    pass


class HypothesisViolation(PerpetuityError):
    pass


class InfeasibleParameter(PerpetuityError, ValueError):
    pass


class BudgetExceeded(PerpetuityError):
    pass
