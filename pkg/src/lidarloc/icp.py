"""Trimmed point-to-point ICP against an indexed target cloud.

Matching runs source -> target: each source point transformed by the
current estimate is paired with its nearest indexed target point, pairs
farther than the trim distance ``delta`` are dropped, and the rigid
transform minimizing

    J = 1/2 * sum_i || target_i - (R @ source_i + t) ||^2

over the surviving pairs is re-solved in closed form each iteration.  The
returned transform therefore maps source-frame points into the target
frame (for a scan in the sensor frame matched against a map, that is the
sensor pose).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .cloud import MapIndex, PointCloud
from .errors import (
    DegenerateGeometryError,
    EmptyInputError,
    InsufficientOverlapError,
    InvalidParameterError,
)
from .geom import Pose3, compose, inverse, rotation_angle

_COLLINEAR_RTOL = 1e-9


@dataclass(frozen=True)
class IcpParams:
    """Trim distance, iteration budget, and convergence thresholds."""

    delta: float = 1.0  # correspondence trim distance, m
    max_iterations: int = 50
    translation_epsilon: float = 1e-4  # m
    rotation_epsilon: float = 1e-4  # rad
    min_inliers: int = 50

    def __post_init__(self):
        if not self.delta > 0.0:
            raise InvalidParameterError("delta must be > 0")
        if self.max_iterations < 1:
            raise InvalidParameterError("max_iterations must be >= 1")
        if not self.translation_epsilon > 0.0 or not self.rotation_epsilon > 0.0:
            raise InvalidParameterError("epsilons must be > 0")
        if self.min_inliers < 1:
            raise InvalidParameterError("min_inliers must be >= 1")


@dataclass(frozen=True, eq=False)
class IcpResult:
    transform: Pose3  # maps source frame into target frame
    final_cost: float  # J over the last accepted inlier set
    inlier_count: int
    iterations: int
    converged: bool
    cost_history: tuple[float, ...] = ()


def _match(points: np.ndarray, index: MapIndex, pose: Pose3, delta: float):
    """Arrays version of the correspondence search (hot path).

    The query is bounded at ``delta``: neighbours at or beyond the trim
    distance would be discarded anyway, and the bound lets the tree prune
    instead of completing a full nearest-neighbour descent per point.
    Misses come back with infinite distance, so the same ``< delta`` mask
    covers both cases.  Returns (mask, matched target points for the True
    rows, transformed source points).
    """
    moved = pose.rotation.apply(points) + pose.translation
    dists, nn = index.tree.query(moved, distance_upper_bound=delta)
    mask = dists < delta
    return mask, index.source.points[nn[mask]], moved


def correspondences(
    source: PointCloud, target: MapIndex, guess: Pose3, delta: float
) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Gated nearest-neighbour pairs under the guess transform.

    Returns ``(source_index, target_point, error)`` tuples where ``error``
    is target_point minus the transformed source point.  Pairs at distance
    >= delta are trimmed (the trimmed pairs contribute nothing downstream).
    """
    if not delta > 0.0:
        raise InvalidParameterError("delta must be > 0")
    if len(source) == 0:
        raise EmptyInputError("source cloud is empty")
    if len(target.source) == 0:
        raise EmptyInputError("target index is empty")
    mask, tgt_pts, moved = _match(source.points, target, guess, delta)
    out = []
    for row, i in enumerate(np.flatnonzero(mask)):
        out.append((int(i), tgt_pts[row].copy(), tgt_pts[row] - moved[i]))
    return out


def solve_rt(pairs) -> Pose3:
    """Closed-form rigid transform taking paired source points onto targets.

    ``pairs`` is a sequence of (source_point, target_point) tuples or an
    equivalent (N, 2, 3) array.  Centroid alignment plus the cross-covariance
    SVD, with the usual sign fix so the rotation determinant is +1.  Needs at
    least three pairs in a non-collinear configuration.
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 3 or arr.shape[1:] != (2, 3):
        raise InvalidParameterError("pairs must be (source, target) 3-vectors")
    src = arr[:, 0, :]
    tgt = arr[:, 1, :]
    n = src.shape[0]
    if n < 3:
        raise DegenerateGeometryError(f"need >= 3 pairs, got {n}")
    c_src = src.mean(axis=0)
    c_tgt = tgt.mean(axis=0)
    x = src - c_src
    y = tgt - c_tgt
    spread = np.linalg.svd(x, compute_uv=False)
    if spread[1] <= _COLLINEAR_RTOL * max(spread[0], 1.0):
        raise DegenerateGeometryError("source pairs are collinear")
    u, _, vt = np.linalg.svd(x.T @ y)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    quat = Rotation.from_matrix(rot).as_quat()
    return Pose3(quat, c_tgt - rot @ c_src)


def register(
    source: PointCloud, target: MapIndex, guess: Pose3, params: IcpParams = IcpParams()
) -> IcpResult:
    """Iterate match/trim/solve from ``guess`` until the pose stops moving.

    The recorded cost J is evaluated after each solve over that iteration's
    inlier pairs; a step that would raise J is rejected and iteration stops
    with the last accepted transform, so the cost history never increases.
    """
    if len(source) < params.min_inliers:
        raise InsufficientOverlapError(
            f"source has {len(source)} points, need >= {params.min_inliers}"
        )
    pts = source.points
    pose = guess
    costs: list[float] = []
    converged = False
    iterations = 0
    inliers = 0
    for _ in range(params.max_iterations):
        mask, tgt_pts, _ = _match(pts, target, pose, params.delta)
        count = int(mask.sum())
        if count < params.min_inliers:
            raise InsufficientOverlapError(
                f"{count} inliers under delta={params.delta}, "
                f"need >= {params.min_inliers}"
            )
        src_in = pts[mask]
        candidate = solve_rt(np.stack([src_in, tgt_pts], axis=1))
        moved = candidate.rotation.apply(src_in) + candidate.translation
        cost = 0.5 * float(np.sum((tgt_pts - moved) ** 2))
        if costs and cost > costs[-1]:
            break  # would increase J: keep the previous estimate
        step = compose(inverse(pose), candidate)
        iterations += 1
        inliers = count
        costs.append(cost)
        pose = candidate
        if (
            float(np.linalg.norm(step.translation)) < params.translation_epsilon
            and rotation_angle(step) < params.rotation_epsilon
        ):
            converged = True
            break
    return IcpResult(
        transform=pose,
        final_cost=costs[-1] if costs else float("nan"),
        inlier_count=inliers,
        iterations=iterations,
        converged=converged,
        cost_history=tuple(costs),
    )
