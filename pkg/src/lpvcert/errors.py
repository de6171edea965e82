"""Exception hierarchy shared by every layer of the toolkit."""


class LpvCertError(Exception):
    """Base class for all errors raised by lpvcert."""


class EmptyMatrixError(LpvCertError, ValueError):
    pass


class NotSquareError(LpvCertError, ValueError):
    pass


class LengthMismatchError(LpvCertError, ValueError):
    pass


class ShapeMismatchError(LpvCertError, ValueError):
    pass


class UnboundedDomainError(LpvCertError, ValueError):
    pass


class MissingSGridError(LpvCertError, ValueError):
    """Output controllability with a rank-deficient output matrix needs an s-grid."""


class NominalPropertyFails(LpvCertError):
    """The unperturbed system does not have the property on the domain."""


class NominalAlreadyViolated(LpvCertError):
    pass


class NotExpressible(LpvCertError):
    """No structured perturbation realizes a rank-dropping direction."""


class EmptyBoxError(LpvCertError, ValueError):
    pass


class NegativeDelayError(LpvCertError, ValueError):
    pass


class ZeroDelayWithConstraint(LpvCertError, ValueError):
    pass


class DelayOutOfRangeError(LpvCertError, ValueError):
    pass


class UnboundedSearchBoxError(LpvCertError, ValueError):
    pass


class ParseError(LpvCertError):
    """Malformed input file. ``location`` names the offending field path."""

    def __init__(self, message, location=None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class ValidationError(LpvCertError):
    def __init__(self, message, location=None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)
