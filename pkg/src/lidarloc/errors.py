"""Exception types shared across the toolkit."""


class LidarLocError(Exception):
    """Base class for all toolkit errors."""


class InvalidParameterError(LidarLocError, ValueError):
    """A configuration value or argument is outside its valid domain."""


class EmptyInputError(LidarLocError, ValueError):
    """An operation that needs data received an empty container."""


class OrderingError(LidarLocError, ValueError):
    """Timestamps regressed where a stream must be monotonic."""


class DegenerateGeometryError(LidarLocError):
    """Point configuration does not determine a unique rigid transform."""


class InsufficientOverlapError(LidarLocError):
    """Too few inlier correspondences to register two clouds."""


class NotInitializedError(LidarLocError):
    """The localizer was used before ``initialize``."""


class LostLocalizationError(LidarLocError):
    """Scan matching was rejected too many times in a row."""


class GaugeFreedomError(LidarLocError):
    """Pose graph has no fixed node and no absolute-position edge."""


class InvalidEdgeError(LidarLocError, ValueError):
    """Graph edge violates its construction rules."""


class DanglingNodeError(LidarLocError, KeyError):
    """Graph edge references a node id that does not exist."""


class AlignmentError(LidarLocError, ValueError):
    """Two trajectories share no overlapping time range."""
