"""Exception hierarchy.

The CLI maps these onto exit codes: ``ConfigError`` -> 2,
``DomainError`` (and subclasses) -> 3, ``OSError`` -> 4.
"""


class SroCompError(Exception):
    """Base class for all package errors."""


class ConfigError(SroCompError, ValueError):
    """Malformed or inconsistent configuration (schema level)."""


class DomainError(SroCompError, ValueError):
    """A physically or numerically invalid request."""


class ValidityError(DomainError):
    """The small-drift condition behind the STFT phase-ramp model is violated."""


class GeometryError(DomainError):
    """Positions outside the room or otherwise impossible geometry."""


class EmptyInputError(SroCompError, ValueError):
    pass


class DataError(SroCompError, ValueError):
    """Input data contains NaN/inf or has an unusable layout."""


class ShapeError(SroCompError, ValueError):
    pass


class AlignmentError(ShapeError):
    pass


class NumericError(SroCompError, ArithmeticError):
    pass
