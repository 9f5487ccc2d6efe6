"""Online localization against a prior map.

The runtime loop is a two-rate fusion: wheel odometry propagates the
fused pose at tick rate, and each LiDAR scan is registered (trimmed ICP)
against a predicted region of interest of the map, then folded in with a
constant-gain (steady-state Kalman) planar correction.  Height, roll and
pitch ride along from the latest scan match; the filter gains only shape
x, y and heading.
"""

from __future__ import annotations

import logging
import math
import time as _time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from . import sim as _sim
from .cloud import MapIndex, PointCloud, index_presampled, voxel_downsample
from .errors import (
    DegenerateGeometryError,
    EmptyInputError,
    InsufficientOverlapError,
    InvalidParameterError,
    LostLocalizationError,
    NotInitializedError,
    OrderingError,
)
from .evaluate import TimingRecord
from .geom import Pose2, Pose3, compose, embed_planar, inverse, relative, wrap_angle, yaw_of
from .icp import IcpParams, register
from .odom import EncoderConfig, EncoderTick, integrate, tick_to_distances

log = logging.getLogger(__name__)

MAX_CONSECUTIVE_REJECTIONS = 3


@dataclass(frozen=True, eq=False)
class LocalizerConfig:
    min_roi_radius: float = 1.0  # m; hard floor for the map query radius
    roi_radius_per_speed: float = 1.0  # extra meters of radius per m/s
    lidar_range: float = 30.0  # sensor reach the ROI must always cover, m
    icp: IcpParams = field(default_factory=IcpParams)
    sskf_gain_position: float = 0.8
    sskf_gain_heading: float = 0.6
    scan_period: float = 0.1  # s, nominal LiDAR interval
    scan_voxel_size: float = 0.0  # thin incoming scans when > 0
    odometry_buffer_horizon: float = 2.0  # s of increments kept for late scans

    def __post_init__(self):
        if self.min_roi_radius < 1.0:
            raise InvalidParameterError("min_roi_radius must be >= 1.0 m")
        for name in ("sskf_gain_position", "sskf_gain_heading"):
            gain = getattr(self, name)
            if not 0.0 <= gain <= 1.0:
                raise InvalidParameterError(f"{name} must be in [0, 1]")
        if not self.scan_period > 0.0:
            raise InvalidParameterError("scan_period must be > 0")
        if self.lidar_range < 0.0 or self.roi_radius_per_speed < 0.0:
            raise InvalidParameterError("radii must be >= 0")
        if not self.odometry_buffer_horizon > 0.0:
            raise InvalidParameterError("odometry_buffer_horizon must be > 0")


@dataclass(eq=False)
class LocalizerState:
    config: LocalizerConfig
    last_lidar_pose: Pose3
    prev_lidar_pose: Pose3
    fused_pose: Pose3
    fused_timestamp: float = -math.inf
    odom_at_last_lidar: Pose3 | None = None
    last_odom_pose: Pose3 | None = None
    last_odom_time: float | None = None
    last_scan_time: float | None = None
    increments: deque = field(default_factory=deque)
    consecutive_rejections: int = 0
    initialized: bool = False


def initialize(
    map_index: MapIndex, initial_pose: Pose3, config: LocalizerConfig
) -> LocalizerState:
    """Seed the filter with a known start pose on the map."""
    if len(map_index.source) == 0:
        raise EmptyInputError("map index is empty")
    return LocalizerState(
        config=config,
        last_lidar_pose=initial_pose,
        prev_lidar_pose=initial_pose,
        fused_pose=initial_pose,
        initialized=True,
    )


def _require_init(state: LocalizerState) -> None:
    if not state.initialized:
        raise NotInitializedError("call initialize() first")


def predict(
    state: LocalizerState, current_odom: Pose3 | None, now: float | None = None
) -> tuple[Pose3, Pose3, Pose3]:
    """(odometry prediction, momentum prediction, the one to use).

    Momentum extrapolation replays the last inter-scan motion:
    ``T_prev o (T_prev_prev^-1 o T_prev)``.  The increment is composed on
    the right, in the frame of the newer pose -- this order is deliberate;
    composing the older pose against the transpose of the newer one does
    not extrapolate forward.  The odometry prediction is preferred while
    ticks are fresh (within two scan periods of ``now``).
    """
    _require_init(state)
    momentum = compose(
        state.last_lidar_pose,
        relative(state.prev_lidar_pose, state.last_lidar_pose),
    )
    have_odom = current_odom is not None and state.odom_at_last_lidar is not None
    if have_odom:
        odom_pred = compose(
            state.last_lidar_pose, relative(state.odom_at_last_lidar, current_odom)
        )
    else:
        odom_pred = momentum
    t_now = state.fused_timestamp if now is None else now
    fresh = (
        have_odom
        and state.last_odom_time is not None
        and t_now - state.last_odom_time <= 2.0 * state.config.scan_period
    )
    return odom_pred, momentum, odom_pred if fresh else momentum


def extract_roi(
    map_index: MapIndex, predicted: Pose3, speed: float, config: LocalizerConfig
) -> PointCloud:
    """Map points the next match may touch: sensor reach plus a speed margin."""
    if speed < 0.0 or not np.isfinite(speed):
        raise InvalidParameterError("speed must be finite and >= 0")
    radius = max(
        config.min_roi_radius,
        config.lidar_range + speed * config.roi_radius_per_speed,
    )
    from .cloud import radius_query

    roi = radius_query(map_index, predicted.translation, radius)
    if len(roi) == 0:
        raise InsufficientOverlapError(
            f"no map points within {radius:.2f} m of the predicted pose"
        )
    return roi


def _planar_blend(pred: Pose3, meas: Pose3, k_pos: float, k_head: float) -> Pose3:
    x = pred.translation[0] + k_pos * (meas.translation[0] - pred.translation[0])
    y = pred.translation[1] + k_pos * (meas.translation[1] - pred.translation[1])
    yaw_p = yaw_of(pred)
    yaw_m = yaw_of(meas)
    yaw = wrap_angle(yaw_p + k_head * wrap_angle(yaw_m - yaw_p))
    # Height/roll/pitch are not filtered: take them from the measurement.
    roll_pitch = Rotation.from_euler("z", -yaw_m) * meas.rotation
    rot = Rotation.from_euler("z", yaw) * roll_pitch
    return Pose3(rot.as_quat(), np.array([x, y, meas.translation[2]]))


def fuse(
    fused_pred: Pose3,
    lidar_measured: Pose3,
    gains: tuple[float, float],
    measurement_time: float = 0.0,
    now: float = 0.0,
    increments=(),
) -> Pose3:
    """Constant-gain planar correction, replayed to ``now`` if the scan is old.

    ``increments`` holds (time, relative pose) odometry steps; those with
    ``measurement_time < time <= now`` are peeled off the prediction, the
    gain blend is applied at measurement time, and the steps are composed
    back on.  With no late increments this is a pure per-axis blend:
    position moves by ``k_pos`` of the innovation, heading by ``k_head``
    along the shortest arc.
    """
    k_pos, k_head = gains
    if not 0.0 <= k_pos <= 1.0 or not 0.0 <= k_head <= 1.0:
        raise InvalidParameterError("gains must be in [0, 1]")
    later = [inc for t, inc in increments if measurement_time < t <= now]
    if not later:
        return _planar_blend(fused_pred, lidar_measured, k_pos, k_head)
    combined = later[0]
    for inc in later[1:]:
        combined = compose(combined, inc)
    at_measurement = compose(fused_pred, inverse(combined))
    corrected = _planar_blend(at_measurement, lidar_measured, k_pos, k_head)
    return compose(corrected, combined)


def on_odometry(
    state: LocalizerState, odom_pose: Pose3, time: float
) -> tuple[LocalizerState, Pose3]:
    """Propagate the fused pose by one odometry step; emits one output."""
    _require_init(state)
    if time < state.fused_timestamp:
        raise OrderingError(
            f"odometry at {time} precedes fused state at {state.fused_timestamp}"
        )
    if state.last_odom_time is not None and time <= state.last_odom_time:
        raise OrderingError(
            f"odometry at {time} does not advance past {state.last_odom_time}"
        )
    if state.last_odom_pose is None:
        increment = Pose3.identity()
    else:
        increment = relative(state.last_odom_pose, odom_pose)
    state.fused_pose = compose(state.fused_pose, increment)
    state.fused_timestamp = time
    state.increments.append((time, increment))
    horizon = state.config.odometry_buffer_horizon
    while state.increments and state.increments[0][0] < time - horizon:
        state.increments.popleft()
    state.last_odom_pose = odom_pose
    state.last_odom_time = time
    return state, state.fused_pose


def _reject(state: LocalizerState, reason: str):
    state.consecutive_rejections += 1
    log.warning(
        "scan rejected (%s); %d consecutive", reason, state.consecutive_rejections
    )
    if state.consecutive_rejections >= MAX_CONSECUTIVE_REJECTIONS:
        raise LostLocalizationError(
            f"{state.consecutive_rejections} consecutive scan rejections"
        )
    return state, None, None


def on_scan(
    state: LocalizerState,
    scan: PointCloud,
    scan_time: float,
    map_index: MapIndex,
    config: LocalizerConfig | None = None,
):
    """Match one scan and fold the result into the fused estimate.

    Returns ``(state, sensor_pose, icp_result)``; the pose and result are
    ``None`` when the match was rejected, in which case nothing but the
    rejection counter changes.
    """
    cfg = config if config is not None else state.config
    _require_init(state)
    if scan_time < state.fused_timestamp - cfg.odometry_buffer_horizon:
        raise OrderingError(
            f"scan at {scan_time} is older than the odometry buffer horizon"
        )
    source = scan
    if cfg.scan_voxel_size > 0.0:
        source = voxel_downsample(scan, cfg.scan_voxel_size)
    _odom_pred, _momentum, fused_pred = predict(
        state, state.last_odom_pose, now=scan_time
    )
    if state.last_scan_time is not None and scan_time > state.last_scan_time:
        dt = scan_time - state.last_scan_time
    else:
        dt = cfg.scan_period
    speed = (
        float(np.linalg.norm(fused_pred.translation - state.last_lidar_pose.translation))
        / dt
    )
    try:
        roi = extract_roi(map_index, fused_pred, speed, cfg)
        # ROI points left the grid filter once already; index them as-is.
        target = index_presampled(roi, map_index.voxel_size)
    except InsufficientOverlapError:
        target = map_index  # one fallback to the whole map
    try:
        result = register(source, target, fused_pred, cfg.icp)
    except (InsufficientOverlapError, DegenerateGeometryError) as exc:
        return _reject(state, str(exc))
    if not result.converged:
        return _reject(state, f"no convergence in {result.iterations} iterations")

    state.consecutive_rejections = 0
    state.prev_lidar_pose = state.last_lidar_pose
    state.last_lidar_pose = result.transform
    state.odom_at_last_lidar = state.last_odom_pose
    state.last_scan_time = scan_time
    state.fused_pose = fuse(
        state.fused_pose,
        result.transform,
        (cfg.sskf_gain_position, cfg.sskf_gain_heading),
        measurement_time=scan_time,
        now=state.fused_timestamp,
        increments=state.increments,
    )
    state.fused_timestamp = max(state.fused_timestamp, scan_time)
    return state, result.transform, result


@dataclass(eq=False)
class LocalizeRun:
    fused: list  # (time, Pose3), one per odometry message
    scan_poses: list  # (time, Pose3) for accepted matches
    timing: TimingRecord
    rejected: int


def run_sensor_log(
    map_index: MapIndex,
    log_data: _sim.SensorLog,
    config: LocalizerConfig,
    initial_pose: Pose3,
    half_fov: bool = False,
) -> LocalizeRun:
    """Replay a recorded sensor log through the localizer.

    Encoder ticks are dead-reckoned with the encoder geometry stored in
    the log metadata.  ``half_fov`` keeps only the forward hemisphere of
    each scan (sensor-frame x > 0), emulating a masked 180-degree sensor.
    """
    meta = log_data.meta
    try:
        enc = EncoderConfig(
            wheel_base=float(meta["wheel_base"]),
            pulses_per_rev=int(meta["pulses_per_rev"]),
            wheel_circumference=float(meta["wheel_circumference"]),
        )
    except KeyError as exc:
        raise InvalidParameterError(
            f"sensor log metadata lacks encoder geometry ({exc})"
        ) from exc
    state = initialize(map_index, initial_pose, config)
    dead_reckoning = Pose2(0.0, 0.0, 0.0)
    fused: list = []
    scan_poses: list = []
    seconds: list = []
    rejected = 0
    for ev in log_data.events:
        if isinstance(ev, _sim.EncoderEvent):
            tick = EncoderTick(ev.time, ev.pulses_left, ev.pulses_right)
            d_left, d_right = tick_to_distances(enc, tick)
            dead_reckoning = integrate(dead_reckoning, d_left, d_right, enc.wheel_base)
            _, pose = on_odometry(state, embed_planar(dead_reckoning), ev.time)
            fused.append((ev.time, pose))
        elif isinstance(ev, _sim.ScanEvent):
            cloud = ev.cloud
            if half_fov:
                cloud = PointCloud(
                    cloud.points[cloud.points[:, 0] > 0.0], cloud.timestamp
                )
            start = _time.perf_counter()
            _, pose, _result = on_scan(state, cloud, ev.time, map_index, config)
            seconds.append(_time.perf_counter() - start)
            if pose is None:
                rejected += 1
            else:
                scan_poses.append((ev.time, pose))
        # GPS events only feed map building; the online filter ignores them.
    return LocalizeRun(
        fused=fused,
        scan_poses=scan_poses,
        timing=TimingRecord.from_seconds(seconds),
        rejected=rejected,
    )
