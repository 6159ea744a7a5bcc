"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """A caller passed arguments outside an operation's domain."""


class NumericalFailure(ArithmeticError):
    """A computation produced non-finite values or failed to converge."""

    def __init__(self, message, index=None):
        super().__init__(message)
        # epoch or step at which the failure was detected, when meaningful
        self.index = index
