"""Exception types shared across the package."""


class AnamorphError(Exception):
    """Base class for all package errors."""


class DepthError(AnamorphError):
    """Pyramid depth out of range or inconsistent with a raster size."""


class KindError(AnamorphError):
    """Operation applied to the wrong pyramid kind."""


class MissingDataError(AnamorphError):
    """An operation that requires fully defined pixels saw MISSING samples."""


class SizeError(AnamorphError):
    """Mismatched or degenerate raster dimensions."""


class FormatError(AnamorphError):
    """A binary payload does not match the expected file format."""


class TruncationError(FormatError):
    """A binary payload ended before the declared record count."""


class RangeError(AnamorphError):
    """A stored value lies outside its documented range."""


class EmptyMaskError(AnamorphError):
    """Imputation requested on a raster with no defined pixels."""


class CoverageError(AnamorphError):
    """Blending input leaves the coarsest pyramid level partially uncovered."""


class GeometryError(AnamorphError):
    """A scene description is degenerate or self-occluding."""


class TimeError(AnamorphError):
    """A flow timestep argument violates the required ordering."""


class ProtocolError(AnamorphError):
    """A wire frame is malformed or out of contract."""


class BackendError(AnamorphError):
    """A denoiser/VAE backend reported an error or misbehaved."""
