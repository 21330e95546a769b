"""Exception types shared across the package.

Validation problems (bad shapes, infeasible budgets, malformed transforms)
raise subclasses of :class:`ValidationError`; broken input files raise
:class:`ParseError` which carries the byte offset where parsing failed.
"""


class NfconvError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(NfconvError, ValueError):
    """Arguments are structurally invalid (wrong shape, range, or kind)."""


class InputShapeError(ValidationError):
    """A vector or grid does not have the expected dimensions."""


class InfeasibleBudgetError(ValidationError):
    """Dirac budget too small for the requested polynomial order."""


class EmptyKernelError(ValidationError):
    """An operation would leave a kernel with no Dirac deltas."""


class InvalidTransformError(ValidationError):
    """Kernel transform with non-positive scale entries."""


class OrderMismatchError(ValidationError):
    """Mixtures of different polynomial orders cannot be combined."""


class IncompatibleKernelError(ValidationError):
    """Kernel order/dimension does not match the integral field."""


class UnsupportedBackendError(ValidationError):
    """Operation requires a different field backend (e.g. grid-only)."""


class DivergenceError(NfconvError, ArithmeticError):
    """An optimization produced a non-finite loss.

    Carries the phase name and iteration index where it happened.
    """

    def __init__(self, message, phase=None, iteration=None):
        super().__init__(message)
        self.phase = phase
        self.iteration = iteration


class ParseError(NfconvError, ValueError):
    """A reader encountered malformed bytes; ``offset`` is the byte position."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
