"""Rigid-body poses and the handful of operations everything else builds on.

Conventions used throughout the package:

* ``Pose3`` maps points from its own (body) frame into the parent frame,
  ``p_parent = R @ p_body + t``.
* Rotations are stored as unit quaternions in ``(x, y, z, w)`` order.
* ``Pose2`` is the planar pose produced by wheel odometry; ``theta`` is
  kept wrapped to (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InvalidParameterError

_QUAT_ATOL = 1e-9


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the interval (-pi, pi]."""
    wrapped = math.remainder(float(theta), math.tau)
    if wrapped <= -math.pi:
        wrapped += math.tau
    return wrapped


@dataclass(frozen=True, eq=False)
class Pose2:
    """Planar pose (x, y, heading); heading normalized on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        for name in ("x", "y", "theta"):
            if not math.isfinite(float(getattr(self, name))):
                raise InvalidParameterError(f"Pose2.{name} must be finite")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))


@dataclass(frozen=True, eq=False)
class Pose3:
    """Rigid transform: unit quaternion (x, y, z, w) plus translation (m)."""

    quaternion: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(q)) or not np.all(np.isfinite(t)):
            raise InvalidParameterError("pose fields must be finite")
        norm = float(np.linalg.norm(q))
        if norm < 1e-12:
            raise InvalidParameterError("quaternion must have non-zero norm")
        object.__setattr__(self, "quaternion", q / norm)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose3":
        return Pose3(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @staticmethod
    def from_rotation(rotation: Rotation, translation=(0.0, 0.0, 0.0)) -> "Pose3":
        return Pose3(rotation.as_quat(), np.asarray(translation, dtype=float))

    @staticmethod
    def from_matrix(matrix: np.ndarray) -> "Pose3":
        """Build from a 4x4 homogeneous transform."""
        m = np.asarray(matrix, dtype=float)
        if m.shape != (4, 4):
            raise InvalidParameterError("expected a 4x4 matrix")
        return Pose3(Rotation.from_matrix(m[:3, :3]).as_quat(), m[:3, 3])

    @staticmethod
    def from_yaw(yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose3":
        return Pose3.from_rotation(Rotation.from_euler("z", yaw), translation)

    @property
    def rotation(self) -> Rotation:
        return Rotation.from_quat(self.quaternion)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return self.rotation.as_matrix()

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m


def compose(a: Pose3, b: Pose3) -> Pose3:
    """a then b: the transform mapping b's frame through a into a's parent."""
    ra = Rotation.from_quat(a.quaternion)
    rb = Rotation.from_quat(b.quaternion)
    return Pose3((ra * rb).as_quat(), ra.apply(b.translation) + a.translation)


def inverse(a: Pose3) -> Pose3:
    r_inv = Rotation.from_quat(a.quaternion).inv()
    return Pose3(r_inv.as_quat(), -r_inv.apply(a.translation))


def relative(a: Pose3, b: Pose3) -> Pose3:
    """Transform taking frame ``a`` to frame ``b``: inverse(a) o b."""
    return compose(inverse(a), b)


def apply(a: Pose3, points: np.ndarray) -> np.ndarray:
    """Map one point (3,) or many points (N, 3) through the pose."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    out = Rotation.from_quat(a.quaternion).apply(np.atleast_2d(pts)) + a.translation
    return out[0] if single else out


def embed_planar(p: Pose2) -> Pose3:
    """Lift a planar pose into 3-D: z = 0, yaw-only rotation."""
    return Pose3.from_yaw(p.theta, (p.x, p.y, 0.0))


def project_planar(a: Pose3) -> Pose2:
    """Drop a 3-D pose to (x, y, yaw); yaw read off the rotated x axis."""
    return Pose2(float(a.translation[0]), float(a.translation[1]), yaw_of(a))


def yaw_of(a: Pose3) -> float:
    m = a.rotation_matrix
    return math.atan2(m[1, 0], m[0, 0])


def rotation_angle(a: Pose3) -> float:
    """Magnitude of the pose's rotation in radians."""
    return float(np.linalg.norm(Rotation.from_quat(a.quaternion).as_rotvec()))


def rotation_distance(a: Pose3, b: Pose3) -> float:
    """Angle of the relative rotation between two poses."""
    return rotation_angle(relative(a, b))


def translation_distance(a: Pose3, b: Pose3) -> float:
    return float(np.linalg.norm(a.translation - b.translation))
