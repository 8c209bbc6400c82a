"""Exception hierarchy shared across the package."""


class DannteError(Exception):
    """Base class for all library errors."""


class ShapeError(DannteError, ValueError):
    """Operand shapes do not agree."""


class DomainError(DannteError, ValueError):
    """A value lies outside the domain of a mathematical function."""


class ContractError(DannteError, ValueError):
    """A documented precondition was violated by the caller."""


class DataError(DannteError, ValueError):
    """Malformed or inconsistent input data."""


class NonFiniteError(DannteError, FloatingPointError):
    """A loss or gradient became NaN or infinite."""
