"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operands have incompatible shapes or lengths."""


class TargetError(ValueError):
    """Labels or regression targets are invalid for the task's loss."""


class InputError(ValueError):
    """Malformed runtime input, e.g. an empty batch."""


class IdxFormatError(ValueError):
    """IDX container violates the binary format; message carries a byte offset."""


class ConfigError(ValueError):
    """Invalid or incomplete configuration; message names the offending field."""


class NumericsError(ArithmeticError):
    """Numerical failure: non-PD solve, non-finite gradient, degenerate statistics."""
