"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class GibbsCheckerError(Exception):
    pass


class ConfigError(GibbsCheckerError, ValueError):
    """A run configuration violates the schema. CLI exit code 2."""


class NumericalError(GibbsCheckerError, ValueError):
    """A numerical precondition failed. CLI exit code 3."""


class TraceFormatError(GibbsCheckerError):
    """A trace file or its metadata sidecar could not be parsed."""


class NotPD(NumericalError):
    pass

class NotOrthonormalRows(NumericalError):
    pass

class NotOrthogonal(NumericalError):
    pass

class RankDeficient(NumericalError):
    pass

class NoSuchM(NumericalError):
    """No M with X1ᵀ = X2ᵀM exists, so the centered linear model is undefined."""

class DegenerateCondition(NumericalError):
    pass

class DegenerateDenominator(NumericalError):
    pass

class DegenerateMarginal(NumericalError):
    pass

class DimMismatch(NumericalError):
    pass

class UnknownBlock(NumericalError, KeyError):
    def __str__(self):
        return Exception.__str__(self)

class TooShort(NumericalError):
    pass

class LengthMismatch(NumericalError):
    pass

class InvalidPrior(NumericalError):
    pass
