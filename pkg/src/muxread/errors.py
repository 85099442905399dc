class MuxreadError(Exception):
    """Base class for all package errors."""


class InputError(MuxreadError, ValueError):
    """Invalid user input: parameters, labels or configuration."""


class NumericalError(MuxreadError, ArithmeticError):
    """A numerical procedure failed (no root, non-convergence, instability)."""
