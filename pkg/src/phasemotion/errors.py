"""Error taxonomy shared by every module.

Two failure classes cover the whole pipeline: bad inputs (caller's fault,
recoverable by fixing the call) and numeric breakdown (non-finite values
surfacing mid-computation, recoverable only by changing data or config).
I/O errors propagate as OSError with the offending path attached.
"""

from __future__ import annotations


class PhaseMotionError(Exception):
    """Base class for library errors."""


class InvalidArgumentError(PhaseMotionError, ValueError):
    """Precondition violated by the caller."""


class NumericFailureError(PhaseMotionError, ArithmeticError):
    """Non-finite value produced where the math requires finite input.

    `where` names the stage (layer, parameter path) that first went bad.
    """

    def __init__(self, message: str, where: str = ""):
        super().__init__(message if not where else f"{message} [{where}]")
        self.where = where
