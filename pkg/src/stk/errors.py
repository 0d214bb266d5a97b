"""Exception types raised by the solvers."""


class STKError(Exception):
    """Base class for all package errors."""


class DefinitenessError(STKError, ValueError):
    """A matrix expected to be symmetric positive definite is not."""


class SingularityError(STKError, ArithmeticError):
    """A (small) linear system is singular."""


class NumericError(STKError, ArithmeticError):
    """Non-finite values appeared during an iteration."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class UsageError(STKError, ValueError):
    """Invalid configuration or command line."""
