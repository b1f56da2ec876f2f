"""Exception hierarchy shared by every module.

The CLI maps each class onto a distinct exit code, so library code should
raise the most specific class that applies.
"""


class SlicError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SlicError, ValueError):
    """Inconsistent shapes, channel arithmetic or malformed tables."""


class UsageError(SlicError, ValueError):
    """A caller passed inputs that violate an operation's preconditions."""


class ComputationError(SlicError, ArithmeticError):
    """A numerical procedure cannot produce a result (e.g. no curve overlap)."""


class DecodeError(SlicError):
    """A bitstream or weight file is malformed, truncated or inconsistent.

    Attributes:
        substream: name of the failing substream ("z_L", "y_C", ...) or None
            when the failure is in the container header itself.
    """

    def __init__(self, message: str, substream: str | None = None):
        if substream is not None:
            message = f"[{substream}] {message}"
        super().__init__(message)
        self.substream = substream
