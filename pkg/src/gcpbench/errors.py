"""Exception hierarchy shared by all gcpbench modules."""


class GcpBenchError(Exception):
    """Base class for every error raised by this package."""


class DegenerateInput(GcpBenchError):
    """Too few points, collinear points, or an otherwise rank-deficient input."""


class NoConsensus(GcpBenchError):
    """RANSAC could not find a model supported by enough inliers."""


class OutOfRange(GcpBenchError):
    """Query time lies outside the trajectory's time span."""


class GapTooLarge(GcpBenchError):
    """The knots bracketing the query time are further apart than allowed."""


class EmptyROI(GcpBenchError):
    """Cropping left no samples to work with."""


class NoDetection(GcpBenchError):
    """The Hough peak is not supported by enough votes."""


class MissingFrame(GcpBenchError):
    """An observation references a sensor frame with no extrinsic calibration."""


class EmptySequence(GcpBenchError):
    """A sequence score was requested over zero ground control points."""


class InsufficientCoverage(GcpBenchError):
    """Fewer than three GCPs could be evaluated, so no alignment is possible."""


class NoOverlap(GcpBenchError):
    """Two trajectories share no common time span."""


class ConfigError(GcpBenchError):
    """A configuration document is malformed or contains unknown keys."""
