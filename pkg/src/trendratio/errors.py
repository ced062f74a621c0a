"""Exception types raised by trendratio."""


class InvalidInputError(ValueError):
    """Input data or arguments violate a documented precondition."""


class NumericalSingularityError(ArithmeticError):
    """A variance matrix needed by a test statistic is singular."""
