"""Exception hierarchy shared across the pipeline stages."""


class VimocapError(Exception):
    """Base class for every error raised by this package."""


class DegenerateInput(VimocapError, ValueError):
    pass


class NotARotation(VimocapError, ValueError):
    pass


class DimensionMismatch(VimocapError, ValueError):
    pass


class LengthMismatch(DimensionMismatch):
    pass


class SequenceTooShort(VimocapError, ValueError):
    pass


class BehindCamera(VimocapError, ValueError):
    pass


class UnknownSensor(VimocapError, KeyError):
    pass


class RankDeficient(VimocapError, ValueError):
    pass


class NonConvergence(VimocapError, RuntimeError):
    pass


class NumericalOverflow(VimocapError, FloatingPointError):
    pass


class Divergence(VimocapError, RuntimeError):
    """Training produced a non-finite loss; ``checkpoint`` holds the last finite state."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class LimitViolation(VimocapError, ValueError):
    pass


class SingularNormalEquations(VimocapError, ArithmeticError):
    pass


class StageError(VimocapError, RuntimeError):
    """Pipeline failure attributed to a named stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class GimbalLockWarning(UserWarning):
    """Euler extraction hit |cos(pitch)| < 1e-7; the third angle was set to zero."""
