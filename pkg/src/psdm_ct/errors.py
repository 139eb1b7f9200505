"""Exception types shared across the package."""


class PsdmError(Exception):
    """Base class for all package errors."""

    module = "psdm_ct"


class InvalidGeometry(PsdmError, ValueError):
    module = "tomo"


class GeometryMismatch(PsdmError, ValueError):
    module = "tomo"


class UnsupportedGeometry(PsdmError, ValueError):
    module = "fusion"


class ShapeMismatch(PsdmError, ValueError):
    module = "variational"


class NonFinite(PsdmError, FloatingPointError):
    """An iterate became NaN/Inf. ``iteration`` holds the failing index."""

    module = "variational"

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class OutOfRange(PsdmError, ValueError):
    module = "diffusion"


class IndexOutOfRange(PsdmError, IndexError):
    module = "diffusion"


class NonNegligibleImaginary(PsdmError, ValueError):
    module = "fusion"


class ImageTooSmall(PsdmError, ValueError):
    module = "metrics"


class DegenerateHistogram(PsdmError, ValueError):
    module = "metrics"


class BadMagic(PsdmError, ValueError):
    module = "lact_io"


class UnsupportedVersion(PsdmError, ValueError):
    module = "lact_io"


class TruncatedPayload(PsdmError, ValueError):
    module = "lact_io"


class NoConvergence(UserWarning):
    """Power iteration hit ``max_iter`` before meeting ``tol``."""
