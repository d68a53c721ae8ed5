"""Exception hierarchy shared by all modules.

The CLI maps :class:`FormatError` and :class:`ShapeError` to exit code 3 and
:class:`NumericalError` to exit code 4.
"""


class DenseBodyError(Exception):
    """Base class for every error raised by this package."""


class FormatError(DenseBodyError):
    """A file or serialized structure is malformed."""


class ModelValidationError(FormatError):
    """A body model violates one of its invariants.

    ``field`` names the offending JSON key so diagnostics point at the input.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ShapeError(DenseBodyError, ValueError):
    """Array extents do not conform."""


class NumericalError(DenseBodyError, ArithmeticError):
    """Degenerate or ill-conditioned numerical input."""
