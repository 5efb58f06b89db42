class DegenerateFilterError(ValueError):
    """Raised when a receive filter is (numerically) orthogonal to the target signature."""


class NumericalError(ArithmeticError):
    """Raised when a matrix that must be invertible is not, even after jitter."""
