"""Exception hierarchy shared across the package."""


class ContractError(ValueError):
    """A precondition of an operation was violated by the caller."""


class DimensionError(ContractError):
    """Tensor shapes do not agree."""


class ValidationError(ValueError):
    """Configuration or dataset failed validation."""


class NumericError(ArithmeticError):
    """A computation produced or would produce a non-finite value."""
