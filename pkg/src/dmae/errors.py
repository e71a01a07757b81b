class ParameterError(ValueError):
    """An argument lies outside the operation's valid range."""


class ShapeError(ValueError):
    """Array dimensions are inconsistent with the requested operation."""
