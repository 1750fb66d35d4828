"""Exception hierarchy shared by every amnet module."""


class AmnetError(Exception):
    """Base class for all errors raised by amnet."""


class ShapeError(AmnetError, ValueError):
    """Array dimensions disagree with what an operation requires."""


class DomainError(AmnetError, ValueError):
    """Input lies outside the domain of an operation (empty softmax, bad threshold)."""


class NumericError(AmnetError, ArithmeticError):
    """A computation produced a non-finite value."""


class ValidationError(AmnetError, ValueError):
    """Input data violates a named rule.

    ``rule`` is a short machine-readable tag such as ``"duplicate_track_id"``.
    """

    def __init__(self, rule, message):
        super().__init__(f"[{rule}] {message}")
        self.rule = rule


class CheckpointError(AmnetError):
    """Base class for checkpoint loading failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError, ShapeError):
    pass


class CheckpointFormatError(CheckpointError):
    pass
