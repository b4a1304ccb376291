"""Exception types shared across the package."""


class MixGlauberError(Exception):
    pass


class InvalidConfig(MixGlauberError, ValueError):
    pass


class InvalidDistribution(MixGlauberError, ValueError):
    pass


class StateSpaceTooLarge(MixGlauberError, ValueError):
    pass


class InvalidDensity(MixGlauberError, ValueError):
    pass


class UnsupportedSlice(MixGlauberError, ValueError):
    pass


class UnsupportedPoint(MixGlauberError, ValueError):
    pass


class AbsoluteContinuityViolation(MixGlauberError, ValueError):
    pass


class InvalidTime(MixGlauberError, ValueError):
    pass


class DerivativeUndefined(MixGlauberError, ArithmeticError):
    pass


class InvalidParameter(MixGlauberError, ValueError):
    pass


class InvalidSpec(MixGlauberError, ValueError):
    """Tester called with a reference distribution it cannot handle."""


class InvalidSetup(MixGlauberError, ValueError):
    """Preconditions of the identity tester are violated (distinct from Reject)."""


class BudgetExhausted(MixGlauberError, RuntimeError):
    pass


class OracleTimeout(MixGlauberError, RuntimeError):
    pass


class PairNotAllowed(MixGlauberError, RuntimeError):
    """Conditioning requested at a pair outside the pre-drawn set."""
