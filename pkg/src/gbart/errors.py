"""Exception types shared across the package."""


class StructureError(ValueError):
    """A decision tree is malformed or an edit targets the wrong kind of node."""


class NumericalError(ArithmeticError):
    """A likelihood or special function produced a non-finite or out-of-domain value."""


class ValidationError(ValueError):
    """User-supplied data, configuration or files failed validation."""


class UnsupportedModelError(ValueError):
    """An operation was requested for a likelihood family that does not support it."""
