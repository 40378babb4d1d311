"""Exception types raised across the package."""


class ProbPnpError(Exception):
    """Base class for all errors raised by this package."""


class PointBehindCamera(ProbPnpError):
    """A 3D point has a camera-frame depth at or below the projection guard."""


class TooFewPoints(ProbPnpError):
    """A pose solve was requested with fewer than three correspondences."""


class AllStartsDiverged(ProbPnpError):
    """No multistart initialization produced a finite objective."""


class NotConverged(ProbPnpError):
    """An operation requires a stationary solve but the gradient is too large."""


class EmptyBatch(ProbPnpError):
    """A batch statistic was requested on an empty batch."""


class EmptyMask(ProbPnpError):
    """A masked reduction was requested with an all-zero mask."""


class SingularCovariance(ProbPnpError):
    """A covariance matrix is not positive definite where it must be."""


class TooFewSamples(ProbPnpError):
    """An ensemble statistic needs at least two samples."""


class InsufficientPairs(ProbPnpError):
    """Calibration fitting needs more (estimate, ground truth) pairs."""


class DegenerateData(ProbPnpError):
    """Calibration input contains a covariance that stays singular after conditioning."""


class FrustumExhausted(ProbPnpError):
    """Scene generation failed to place an object inside the viewing frustum."""


class SchemaError(ProbPnpError):
    """A serialized file does not match the expected schema or version."""
