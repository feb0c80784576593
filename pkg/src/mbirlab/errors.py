"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions do not match an operation's contract."""


class ConfigError(ValueError):
    """A configuration value is missing, unknown, or out of range."""


class FormatError(ValueError):
    """A file does not conform to its on-disk format."""


class NumericalBreakdownError(ArithmeticError):
    """An iterative routine produced a non-finite intermediate."""
