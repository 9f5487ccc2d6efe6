"""Point-cloud container, voxel thinning, and the k-d tree map index.

The map index is the query structure the localizer matches scans against.
Points are stored as an ``(N, 3)`` float64 array; the ASCII file format is
one ``x y z`` triple per line with ``#`` comments allowed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInputError, InvalidParameterError

DEFAULT_VOXEL_SIZE = 0.2  # meters; keeps map memory modest at survey scale


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable bag of 3-D points with an optional capture time."""

    points: np.ndarray
    timestamp: float | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidParameterError("points must have shape (N, 3)")
        if not np.all(np.isfinite(pts)):
            raise InvalidParameterError("points must be finite (no NaN/Inf)")
        object.__setattr__(self, "points", pts)
        if self.timestamp is not None:
            object.__setattr__(self, "timestamp", float(self.timestamp))

    def __len__(self) -> int:
        return self.points.shape[0]


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Replace every occupied voxel by the centroid of its points.

    Voxel membership uses ``floor(p / voxel_size)``, so a point exactly on
    a voxel boundary lands in the higher-index voxel.  Output order follows
    the lexicographically sorted voxel keys, which makes the result
    deterministic for a given input.
    """
    if not voxel_size > 0.0 or not np.isfinite(voxel_size):
        raise InvalidParameterError(f"voxel_size must be > 0, got {voxel_size}")
    if len(cloud) == 0:
        return PointCloud(np.zeros((0, 3)), cloud.timestamp)
    keys = np.floor(cloud.points / voxel_size).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((uniq.shape[0], 3))
    np.add.at(sums, inverse, cloud.points)
    counts = np.bincount(inverse, minlength=uniq.shape[0]).astype(float)
    return PointCloud(sums / counts[:, None], cloud.timestamp)


@dataclass(frozen=True, eq=False)
class MapIndex:
    """Voxel-thinned cloud plus a k-d tree for nearest/radius queries."""

    source: PointCloud
    voxel_size: float
    tree: cKDTree = field(repr=False)


def build_index(cloud: PointCloud, voxel_size: float = DEFAULT_VOXEL_SIZE) -> MapIndex:
    if len(cloud) == 0:
        raise EmptyInputError("cannot index an empty cloud")
    thinned = voxel_downsample(cloud, voxel_size)
    return MapIndex(thinned, float(voxel_size), cKDTree(thinned.points))


def index_presampled(cloud: PointCloud, voxel_size: float) -> MapIndex:
    """Index a cloud that is already at voxel sparsity, skipping the filter.

    Meant for subsets of an indexed map (ROI extraction): those points came
    out of the grid filter once, so re-running it per query would only burn
    time recomputing the identity.  The caller vouches for the sparsity.
    """
    if len(cloud) == 0:
        raise EmptyInputError("cannot index an empty cloud")
    if not voxel_size > 0.0 or not np.isfinite(voxel_size):
        raise InvalidParameterError(f"voxel_size must be > 0, got {voxel_size}")
    return MapIndex(cloud, float(voxel_size), cKDTree(cloud.points))


def nearest(index: MapIndex, query: np.ndarray) -> tuple[np.ndarray, float]:
    """Nearest indexed point to ``query``; ties go to the lowest stored index."""
    q = np.asarray(query, dtype=float).reshape(3)
    if not np.all(np.isfinite(q)):
        raise InvalidParameterError("query point must be finite")
    dist, idx = index.tree.query(q)
    # The tree alone does not promise a tie rule, so re-check the shell.
    shell = index.tree.query_ball_point(q, dist + max(1e-12 * max(dist, 1.0), 1e-15))
    if len(shell) > 1:
        pts = index.source.points[shell]
        dists = np.linalg.norm(pts - q, axis=1)
        best = dists.min()
        idx = min(i for i, d in zip(shell, dists) if d == best)
        dist = best
    return index.source.points[idx].copy(), float(dist)


def radius_query(index: MapIndex, center: np.ndarray, radius: float) -> PointCloud:
    """All indexed points with Euclidean distance <= radius, in index order."""
    if not radius > 0.0 or not np.isfinite(radius):
        raise InvalidParameterError(f"radius must be > 0, got {radius}")
    c = np.asarray(center, dtype=float).reshape(3)
    if not np.all(np.isfinite(c)):
        raise InvalidParameterError("center must be finite")
    hits = index.tree.query_ball_point(c, radius, return_sorted=True)
    if not hits:
        return PointCloud(np.zeros((0, 3)))
    pts = index.source.points[hits]
    keep = np.linalg.norm(pts - c, axis=1) <= radius
    return PointCloud(pts[keep])


def write_xyz(cloud: PointCloud, path) -> None:
    """Write one ``x y z`` line per point, 9 significant digits."""
    with open(path, "w") as fh:
        for x, y, z in cloud.points:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_xyz(path) -> PointCloud:
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise InvalidParameterError(
                    f"{path}:{lineno}: expected 'x y z', got {raw.rstrip()!r}"
                )
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise InvalidParameterError(f"{path}:{lineno}: {exc}") from exc
    return PointCloud(np.array(rows, dtype=float).reshape(-1, 3))
