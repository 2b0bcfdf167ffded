"""Exception types shared across the package."""


class PolydecayError(Exception):
    """Base class for all package errors."""


class DomainError(PolydecayError, ValueError):
    """Argument outside the domain where an operation is defined."""


class RangeError(PolydecayError, ValueError):
    """Requested value lies outside an image or a truncation range."""


class ConstructionError(PolydecayError, ValueError):
    """Parameters do not describe a valid object."""


class UnsupportedError(PolydecayError, NotImplementedError):
    """Operation not available for this object (e.g. missing formula)."""


class NumericalError(PolydecayError, ArithmeticError):
    """An iterative method failed to converge or a solve broke down."""


class ResolutionError(PolydecayError, ValueError):
    """A probe scale is finer than the grid can resolve."""


class ContractError(PolydecayError, ValueError):
    """Inputs violate a documented precondition (e.g. support constraints)."""


class InsufficientDataError(PolydecayError, ValueError):
    """Too few usable points to fit."""
