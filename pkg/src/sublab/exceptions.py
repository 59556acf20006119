"""Exception hierarchy shared by every sublab module."""


class SublabError(Exception):
    """Base class for all errors raised by sublab."""


class InvalidInputError(SublabError, ValueError):
    """An argument violates an operation's precondition."""


class SingularityError(SublabError, ValueError):
    """A function was evaluated at its singular point."""


class DomainTooSmallError(SublabError, ValueError):
    """The mesh does not place any node inside the domain."""


class ConvergenceError(SublabError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InsufficientSamplesError(SublabError, RuntimeError):
    """A Monte Carlo estimate is zero where a logarithm is needed."""

    def __init__(self, message, epsilon=None):
        super().__init__(message)
        self.epsilon = epsilon
