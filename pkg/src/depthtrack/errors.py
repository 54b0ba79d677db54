"""Exception hierarchy.

Everything raised on bad input data derives from :class:`DepthTrackError` so the
command line can map it onto a single exit code.
"""


class DepthTrackError(Exception):
    pass


class MissingFile(DepthTrackError):
    pass


class MalformedManifest(DepthTrackError):
    pass


class MalformedRecord(DepthTrackError):
    pass


class DimensionMismatch(DepthTrackError):
    pass


class NonMonotonicFrameIndex(DepthTrackError):
    pass


class LengthMismatch(DepthTrackError):
    pass


class BothEmpty(DepthTrackError):
    pass


class NonPositiveVoxelSize(DepthTrackError):
    pass


class GridMismatch(DepthTrackError):
    pass


class NonPositiveGeometry(DepthTrackError):
    pass


class SingularInnovationCovariance(DepthTrackError):
    pass


class ShapeMismatch(DepthTrackError):
    pass


class OutOfOrderFrame(DepthTrackError):
    pass


class MisalignedFrames(DepthTrackError):
    pass


class ConfigError(DepthTrackError):
    """Unknown key or out-of-range value in a tracker configuration."""
