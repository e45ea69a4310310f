"""Exception hierarchy shared across the package."""


class LTNError(Exception):
    """Base class for all package errors."""


class ValidationError(LTNError, ValueError):
    """Inputs violate a documented precondition."""


class NewickError(ValidationError):
    """Malformed Newick text.

    Attributes
    ----------
    offset : int
        Byte offset (UTF-8) of the offending character.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class AlignmentError(ValidationError):
    """Count-table columns do not match the tree leaves."""


class DomainError(LTNError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class NumericalError(LTNError, ArithmeticError):
    """A linear-algebra or sampling step failed numerically."""


class FormatError(ValidationError):
    """A file on disk does not follow the documented format."""
