"""Exception and warning types shared across the package."""


class CylTomoError(Exception):
    """Base class for all cyltomo errors."""


# geometry
class DegenerateRay(CylTomoError):
    """Point lies at or behind the source plane; projection undefined."""


# grid / recon configuration
class ConfigError(CylTomoError):
    """Inconsistent or invalid configuration."""


# projector
class NonPositiveIntensity(CylTomoError):
    """Intensity image contains values <= 0; log transform undefined."""


# recon
class EmptyView(CylTomoError):
    """No ray of the view intersects the volume."""


class EmptyRoi(CylTomoError):
    """Region of interest contains no voxels."""


# imgproc
class DegenerateHistogram(CylTomoError):
    """Image is constant; no threshold separates it."""


class EmptyResult(CylTomoError):
    """Mask operation removed every foreground pixel."""


class DegenerateMask(CylTomoError):
    """Mask too small or malformed for axis extraction."""


class OutOfFrame(CylTomoError):
    """Requested strip lies entirely outside the image."""


# posefit
class IllPosed(CylTomoError):
    """Observation set cannot constrain the point (single effective view)."""


class DegenerateAxis(CylTomoError):
    """The two axis points coincide."""


class FlatSignal(CylTomoError):
    """Azimuthal signal has no usable fundamental; phase unidentifiable."""


class NoConvergenceWarning(UserWarning):
    """Levenberg-Marquardt hit the iteration cap; best iterate returned."""


# mtf
class AllZero(CylTomoError):
    """Modulation of an all-zero array is 0/0; undefined."""


class PeriodTooSmall(CylTomoError):
    """Line period below two voxels; sliding window undefined."""


# io
class SchemaMismatch(CylTomoError):
    """Manifest schema version or artifact kind is not understood."""


class SizeMismatch(CylTomoError):
    """Raw payload length disagrees with the manifest dimensions."""


class IoFailure(CylTomoError):
    """Underlying file operation failed."""


# phantom
class OverlapWarning(UserWarning):
    """A component overwrote voxels already claimed by an earlier one."""
