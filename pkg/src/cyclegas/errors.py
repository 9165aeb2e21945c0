"""Exception hierarchy shared by all modules."""


class CycleGasError(Exception):
    """Base class for every error raised by the package."""


class DuplicateSite(CycleGasError, ValueError):
    pass


class TooShort(CycleGasError, ValueError):
    pass


class CatalogTooLarge(CycleGasError):
    pass


class NonPositiveAlpha(CycleGasError, ValueError):
    pass


class DivergentSeries(CycleGasError, ArithmeticError):
    pass


class RhoOutOfRange(CycleGasError, ValueError):
    pass


class NoFiniteBound(CycleGasError, ArithmeticError):
    pass


class NoModulus(CycleGasError, ValueError):
    pass


class NotConvex(CycleGasError, ValueError):
    pass


class NotEmptyAtStart(CycleGasError, ValueError):
    pass


class StateSpaceTooLarge(CycleGasError):
    pass


class HorizonExceeded(CycleGasError):
    """The backward search for an empty time ran past its horizon."""


class NotCertifiedSubcritical(CycleGasError):
    pass


class ClanCapExceeded(CycleGasError):
    pass


class HaloCapExceeded(CycleGasError):
    pass


class UnlabeledNode(CycleGasError):
    pass


class TooFewSamples(CycleGasError, ValueError):
    pass


class ConfigInvalid(CycleGasError, ValueError):
    pass


# Divergent tails surface from the same check as divergent series.
DivergentTail = DivergentSeries
