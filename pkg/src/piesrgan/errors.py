"""Exception types shared across the package.

The CLI maps :class:`ValidationError` to exit status 1 and
:class:`NumericalAbort` to exit status 2.
"""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class ShapeError(ValidationError):
    """Tensor or field extents are incompatible."""


class StageMismatchError(ValidationError):
    """Dataset stage does not match the requested training stage."""


class FingerprintError(ValidationError):
    """Parameters or filter settings do not match a stored fingerprint."""


class NumericalAbort(RuntimeError):
    """A NaN/Inf or stability violation stopped a time or training loop.

    ``index`` is the step or batch index at which the problem was detected.
    """

    def __init__(self, message, index=None, payload=None):
        super().__init__(message)
        self.index = index
        self.payload = payload
