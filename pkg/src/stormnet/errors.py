"""Shared exception types."""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class ContainerError(ValueError):
    """On-disk container is malformed, truncated, or fails a checksum."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values where finiteness is required."""


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss, incompatible configuration)."""
