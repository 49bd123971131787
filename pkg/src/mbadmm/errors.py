"""Exception hierarchy shared by the solver, diagnostics and oracles."""


class AdmmError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(AdmmError, ValueError):
    pass


class UnsupportedOperation(AdmmError, TypeError):
    pass


class InvalidProblem(AdmmError, ValueError):
    pass


class SingularSystem(AdmmError):
    pass


class InnerNonConvergence(AdmmError):
    pass


class DualGradientIdentityViolated(AdmmError):
    pass


class InvalidConfig(AdmmError, ValueError):
    pass


class InvalidContext(AdmmError):
    """A certificate was requested outside the regime where it is defined."""


class MissingOracle(AdmmError):
    pass


class SingularKkt(AdmmError):
    pass


class NonConvergence(AdmmError):
    pass


class AmbiguousPattern(AdmmError):
    pass


class ConstructionFailed(AdmmError):
    pass


class RateWindowError(AdmmError, ValueError):
    pass
