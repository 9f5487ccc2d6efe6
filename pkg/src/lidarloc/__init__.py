"""LiDAR localization toolkit: mapping, trimmed-ICP tracking, sensor fusion.

The package is organised around one module per stage of the pipeline:

- :mod:`lidarloc.geom` -- planar and rigid-body pose algebra
- :mod:`lidarloc.cloud` -- point clouds, voxel thinning, spatial index
- :mod:`lidarloc.odom` -- wheel-encoder dead reckoning
- :mod:`lidarloc.icp` -- trimmed point-to-point scan registration
- :mod:`lidarloc.graph` -- GPS-constrained pose-graph mapping
- :mod:`lidarloc.locate` -- online localization against a prior map
- :mod:`lidarloc.sim` -- deterministic sensor simulator
- :mod:`lidarloc.evaluate` -- trajectory error metrics and reports
- :mod:`lidarloc.figures` -- matplotlib renderings of the reports
- :mod:`lidarloc.cli` -- the ``lidarloc`` command-line tool
"""

from .cloud import MapIndex, PointCloud, build_index, voxel_downsample
from .errors import (
    AlignmentError,
    DanglingNodeError,
    DegenerateGeometryError,
    EmptyInputError,
    GaugeFreedomError,
    InsufficientOverlapError,
    InvalidEdgeError,
    InvalidParameterError,
    LidarLocError,
    LostLocalizationError,
    NotInitializedError,
    OrderingError,
)
from .geom import Pose2, Pose3, apply, compose, inverse, relative
from .graph import MapParams, PoseGraph, build_map, optimize
from .icp import IcpParams, IcpResult, register
from .locate import LocalizerConfig, LocalizerState, initialize, on_odometry, on_scan

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "DanglingNodeError",
    "DegenerateGeometryError",
    "EmptyInputError",
    "GaugeFreedomError",
    "IcpParams",
    "IcpResult",
    "InsufficientOverlapError",
    "InvalidEdgeError",
    "InvalidParameterError",
    "LidarLocError",
    "LocalizerConfig",
    "LocalizerState",
    "LostLocalizationError",
    "MapIndex",
    "MapParams",
    "NotInitializedError",
    "OrderingError",
    "PointCloud",
    "Pose2",
    "Pose3",
    "PoseGraph",
    "apply",
    "build_index",
    "build_map",
    "compose",
    "initialize",
    "inverse",
    "on_odometry",
    "on_scan",
    "optimize",
    "register",
    "relative",
    "voxel_downsample",
    "__version__",
]
