"""Exceptions raised by the arbkit library."""


class ArbkitError(Exception):
    """Base class for all library errors"""


class ContractViolation(ArbkitError):
    """An input breaks an operation's precondition"""


class NotPSDError(ArbkitError):
    """A matrix flagged as positive semidefinite has a clearly negative eigenvalue"""


class ShapeMismatch(ArbkitError):
    """Array shapes of the operands do not agree"""


class NonPredictableError(ArbkitError):
    """An integrand read path information from the future"""


class UnsupportedRefinement(ArbkitError):
    """The model cannot produce a coupled refined path"""


class DensityAbsent(ArbkitError):
    """The model has no canonical density process"""


class InvalidModelSpec(ArbkitError):
    """Model parameters fail validation"""


class PathFileError(ArbkitError):
    """A path file is malformed or unreadable"""
