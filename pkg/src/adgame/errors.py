"""Exception types shared across the package."""


class AdgameError(Exception):
    """Base class for package errors."""


class DimensionError(AdgameError, ValueError):
    """Alphabet sizes of the operands do not match."""


class ValidationError(AdgameError, ValueError):
    """An input violates a documented precondition."""


class ResourceBudgetError(AdgameError, RuntimeError):
    """An exact computation would exceed the enumeration budget."""


class SolverError(AdgameError, RuntimeError):
    """A numerical solver failed to produce a certified answer."""
