"""Error types shared by the numerical modules and the command line."""


class ParameterError(ValueError):
    """Inputs violate a documented precondition."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or failed to converge."""
