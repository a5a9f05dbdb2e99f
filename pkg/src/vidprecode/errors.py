"""Exception types shared across the package."""


class VidprecodeError(Exception):
    """Base class for all package errors."""


class InvalidShape(VidprecodeError):
    """Tensor/frame extents incompatible with the requested operation."""


class InvalidArgument(VidprecodeError):
    """Argument outside its documented domain."""


class NumericError(VidprecodeError):
    """NaN or Inf encountered where finite values are required."""


class TapeConsumed(VidprecodeError):
    """Backward was already run on this tape."""


class UnsupportedFormat(VidprecodeError):
    """File declares a format the reader does not handle."""


class CorruptStream(VidprecodeError):
    """File payload inconsistent with its declared structure."""


class CodecProcessError(VidprecodeError):
    """External encoder/decoder process failed; message carries the command and output."""


class CodecContractError(VidprecodeError):
    """External codec produced output violating the driver contract (e.g. dimension drift)."""


class NoOverlap(VidprecodeError):
    """RD curves share no quality/rate interval."""


class InsufficientPoints(VidprecodeError):
    """Fewer RD points than the fit requires."""


class ConfigError(VidprecodeError):
    """Run configuration missing, malformed, or self-inconsistent."""
