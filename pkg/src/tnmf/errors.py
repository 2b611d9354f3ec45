"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """A matrix violates a value constraint (finiteness, nonnegativity)."""


class ParameterError(ValueError):
    """An argument lies outside its allowed range."""


class NumericalError(ArithmeticError):
    """The iteration produced a non-finite value."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class PGMError(ValueError):
    """Malformed PGM data; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DatasetError(ValueError):
    """A dataset directory or manifest could not be loaded."""


class PlanError(ValueError):
    """An experiment plan file is unreadable or invalid."""
