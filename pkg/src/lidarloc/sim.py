"""Deterministic sensor simulator: box world, spinning LiDAR, encoders, GPS.

Identical seeds produce byte-identical logs.  Every noise draw comes from
a Philox counter stream keyed by a SplitMix64 hash of ``(seed, stream,
event index)``, so results do not depend on evaluation order and reruns
are exactly reproducible.

A sensor log is a directory: ``index.txt`` lists one ``time TYPE payload``
line per event (with ``# key value`` header comments carrying the sensor
metadata), scans live under ``scans/`` as x-y-z files, and the per-stream
views ``encoder.txt`` / ``gps.txt`` / ``groundtruth.txt`` sit alongside.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import evaluate as _evaluate
from .cloud import PointCloud, read_xyz, write_xyz
from .errors import InvalidParameterError
from .geom import Pose2, Pose3, compose, embed_planar, wrap_angle
from .odom import EncoderConfig, EncoderTick, write_encoder_stream

# SplitMix64 mixing constants.
_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_1 = 0xBF58476D1CE4E5B9
_MIX_2 = 0x94D049BB133111EB

_STREAM_SCAN = 1
_STREAM_GPS = 2

_EPS_COUNT = 1e-9  # guards duration*rate queries against float droop


def mix64(*values: int) -> int:
    """Fold integers into one 64-bit key (SplitMix64 finalizer chain)."""
    x = 0
    for v in values:
        x = (x + (int(v) & _MASK64) + _GOLDEN) & _MASK64
        x ^= x >> 30
        x = (x * _MIX_1) & _MASK64
        x ^= x >> 27
        x = (x * _MIX_2) & _MASK64
        x ^= x >> 31
    return x


def _stream(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=mix64(seed, stream, index)))


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box given by opposite corners."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=float).reshape(3)
        hi = np.asarray(self.max_corner, dtype=float).reshape(3)
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise InvalidParameterError("box corners must be finite")
        if not np.all(lo < hi):
            raise InvalidParameterError("min_corner must be < max_corner per axis")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)


@dataclass(frozen=True, eq=False)
class DynamicBox:
    box: Box
    velocity: np.ndarray  # m/s, constant

    def __post_init__(self):
        v = np.asarray(self.velocity, dtype=float).reshape(3)
        if not np.all(np.isfinite(v)):
            raise InvalidParameterError("velocity must be finite")
        object.__setattr__(self, "velocity", v)

    def at(self, time: float) -> Box:
        shift = self.velocity * time
        return Box(self.box.min_corner + shift, self.box.max_corner + shift)


@dataclass(frozen=True, eq=False)
class World:
    boxes: tuple = ()
    ground_plane: bool = True  # infinite plane z = 0
    dynamic_boxes: tuple = ()


@dataclass(frozen=True)
class LidarModel:
    """Spinning multi-channel range sensor."""

    channels: int = 16
    vertical_fov: float = math.radians(30.0)  # full span, symmetric about 0
    horizontal_fov: float = math.tau
    rays_per_revolution: int = 720  # azimuth steps per scan
    rate: float = 10.0  # Hz
    range_noise_sigma: float = 0.0  # m, 1-sigma along the ray
    max_range: float = 100.0

    def __post_init__(self):
        if self.channels < 1 or self.rays_per_revolution < 1:
            raise InvalidParameterError("channels/rays_per_revolution must be >= 1")
        if not self.rate > 0.0 or not self.max_range > 0.0:
            raise InvalidParameterError("rate and max_range must be > 0")
        if self.range_noise_sigma < 0.0:
            raise InvalidParameterError("range_noise_sigma must be >= 0")
        if not 0.0 <= self.horizontal_fov <= math.tau or self.vertical_fov < 0.0:
            raise InvalidParameterError("bad field of view")


@dataclass(frozen=True)
class GpsModel:
    noise_sigma: float = 0.0  # m per axis
    rate: float = 5.0  # Hz
    dropout_intervals: tuple = ()  # half-open [start, end) windows, seconds

    def __post_init__(self):
        if self.noise_sigma < 0.0 or not self.rate > 0.0:
            raise InvalidParameterError("bad GPS model")
        spans = tuple((float(a), float(b)) for a, b in self.dropout_intervals)
        for a, b in spans:
            if not b > a:
                raise InvalidParameterError("dropout interval must have end > start")
        object.__setattr__(self, "dropout_intervals", spans)

    def dropped(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.dropout_intervals)


class WaypointPath:
    """Time-parameterized planar path: linear x/y, unwrapped linear yaw.

    Waypoints are (time, x, y, yaw) rows with strictly increasing times;
    queries outside the span clamp to the end poses.
    """

    def __init__(self, waypoints):
        wp = np.asarray(waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 4 or wp.shape[0] < 1:
            raise InvalidParameterError("waypoints must be (M, 4): t x y yaw")
        if not np.all(np.isfinite(wp)):
            raise InvalidParameterError("waypoints must be finite")
        if np.any(np.diff(wp[:, 0]) <= 0.0):
            raise InvalidParameterError("waypoint times must strictly increase")
        self.times = wp[:, 0]
        self.xy = wp[:, 1:3]
        # Continuous heading: accumulate wrapped increments so multi-lap
        # paths keep growing instead of jumping at +-pi.
        yaw = wp[:, 3]
        cum = [float(yaw[0])]
        for k in range(1, len(yaw)):
            cum.append(cum[-1] + wrap_angle(yaw[k] - yaw[k - 1]))
        self.yaw_cum = np.array(cum)
        seg = np.linalg.norm(np.diff(self.xy, axis=0), axis=1)
        self.arc = np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    def pose2_at(self, t: float) -> Pose2:
        x = float(np.interp(t, self.times, self.xy[:, 0]))
        y = float(np.interp(t, self.times, self.xy[:, 1]))
        yaw = float(np.interp(t, self.times, self.yaw_cum))
        return Pose2(x, y, wrap_angle(yaw))

    def arc_length_at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.arc))

    def heading_at(self, t: float) -> float:
        """Unwrapped cumulative heading (radians, not wrapped)."""
        return float(np.interp(t, self.times, self.yaw_cum))


@dataclass(frozen=True, eq=False)
class SensorSuite:
    lidar: LidarModel
    encoder: EncoderConfig
    gps: GpsModel
    encoder_rate: float = 50.0  # Hz tick clock
    mount: Pose3 = field(default_factory=Pose3.identity)  # vehicle -> sensor

    def __post_init__(self):
        if not self.encoder_rate > 0.0:
            raise InvalidParameterError("encoder_rate must be > 0")


@dataclass(frozen=True, eq=False)
class EncoderEvent:
    time: float
    pulses_left: int
    pulses_right: int
    truth: Pose3 | None = None


@dataclass(frozen=True, eq=False)
class GpsEvent:
    time: float
    position: np.ndarray
    truth: Pose3 | None = None


@dataclass(frozen=True, eq=False)
class ScanEvent:
    time: float
    cloud: PointCloud
    truth: Pose3 | None = None


_PRIORITY = {EncoderEvent: 0, GpsEvent: 1, ScanEvent: 2}


@dataclass(eq=False)
class SensorLog:
    events: list
    meta: dict


def _ray_directions(model: LidarModel) -> np.ndarray:
    if model.channels == 1:
        elevations = np.array([0.0])
    else:
        half = 0.5 * model.vertical_fov
        elevations = np.linspace(-half, half, model.channels)
    n = model.rays_per_revolution
    azimuths = -0.5 * model.horizontal_fov + model.horizontal_fov * (
        np.arange(n) + 0.5
    ) / n
    az, el = np.meshgrid(azimuths, elevations, indexing="ij")
    az = az.ravel()
    el = el.ravel()
    return np.column_stack(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
    )


def _intersect_boxes(origin, dirs, boxes) -> np.ndarray:
    best = np.full(dirs.shape[0], np.inf)
    for box in boxes:
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (box.min_corner - origin) / dirs
            t2 = (box.max_corner - origin) / dirs
        t_near = np.nanmax(np.fmin(t1, t2), axis=1)
        t_far = np.nanmin(np.fmax(t1, t2), axis=1)
        hit = (t_far >= np.maximum(t_near, 0.0)) & (t_near > 1e-9)
        best = np.where(hit, np.minimum(best, t_near), best)
    return best


def raycast_scan(
    world: World,
    sensor_pose: Pose3,
    model: LidarModel,
    time: float = 0.0,
    seed: int = 0,
) -> PointCloud:
    """One full sweep; returned points are in the sensor frame.

    Range noise (if any) perturbs the measured distance along each ray.
    """
    dirs_local = _ray_directions(model)
    rot = sensor_pose.rotation_matrix
    origin = sensor_pose.translation
    dirs = dirs_local @ rot.T
    dist = np.full(dirs.shape[0], np.inf)
    if world.ground_plane:
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_ground = -origin[2] / dz
        ok = np.isfinite(t_ground) & (t_ground > 1e-9)
        dist = np.where(ok, t_ground, dist)
    boxes = list(world.boxes) + [d.at(time) for d in world.dynamic_boxes]
    if boxes:
        dist = np.minimum(dist, _intersect_boxes(origin, dirs, boxes))
    hit = np.isfinite(dist) & (dist <= model.max_range)
    if model.range_noise_sigma > 0.0:
        noise = _stream(seed, _STREAM_SCAN, 0).normal(
            0.0, model.range_noise_sigma, dirs.shape[0]
        )
        dist = dist + noise
        hit &= dist > 1e-6
    points = dirs_local[hit] * dist[hit, None]
    return PointCloud(points, timestamp=time)


def _event_count(duration: float, rate: float) -> int:
    return int(math.floor(duration * rate + _EPS_COUNT))


def run_scenario(
    world: World,
    path: WaypointPath,
    sensors: SensorSuite,
    duration: float,
    seed: int = 0,
) -> SensorLog:
    """Drive the path and emit every sensor event, time-sorted.

    Encoder ticks carry whole pulse counts obtained by flooring each
    wheel's cumulative arc length to the pulse quantum, so the running
    quantization error never exceeds one quantum.  GPS fixes inside a
    dropout window are suppressed after their noise is drawn, which keeps
    the surviving fixes identical whether or not a dropout is configured.
    """
    if not duration > 0.0 or not math.isfinite(duration):
        raise InvalidParameterError("duration must be a positive, finite time")
    enc = sensors.encoder
    quantum = enc.meters_per_pulse
    half_base = 0.5 * enc.wheel_base

    def truth_at(t: float) -> Pose3:
        return compose(embed_planar(path.pose2_at(t)), sensors.mount)

    events: list = []

    n_enc = _event_count(duration, sensors.encoder_rate)
    yaw0 = path.heading_at(0.0)
    prev_l = prev_r = 0
    for k in range(1, n_enc + 1):
        t = k / sensors.encoder_rate
        s = path.arc_length_at(t)
        dyaw = path.heading_at(t) - yaw0
        cum_left = s - half_base * dyaw
        cum_right = s + half_base * dyaw
        tot_l = int(math.floor(cum_left / quantum))
        tot_r = int(math.floor(cum_right / quantum))
        events.append(EncoderEvent(t, tot_l - prev_l, tot_r - prev_r, truth_at(t)))
        prev_l, prev_r = tot_l, tot_r

    n_gps = _event_count(duration, sensors.gps.rate)
    for k in range(1, n_gps + 1):
        t = k / sensors.gps.rate
        if sensors.gps.dropped(t):
            continue
        truth = truth_at(t)
        fix = truth.translation.copy()
        if sensors.gps.noise_sigma > 0.0:
            fix = fix + _stream(seed, _STREAM_GPS, k).normal(
                0.0, sensors.gps.noise_sigma, 3
            )
        events.append(GpsEvent(t, fix, truth))

    n_scan = _event_count(duration, sensors.lidar.rate)
    for k in range(1, n_scan + 1):
        t = k / sensors.lidar.rate
        truth = truth_at(t)
        cloud = raycast_scan(
            world, truth, sensors.lidar, time=t, seed=mix64(seed, _STREAM_SCAN, k)
        )
        events.append(ScanEvent(t, cloud, truth))

    events.sort(key=lambda e: (e.time, _PRIORITY[type(e)]))
    meta = {
        "duration": float(duration),
        "seed": int(seed),
        "encoder_rate": float(sensors.encoder_rate),
        "gps_rate": float(sensors.gps.rate),
        "lidar_rate": float(sensors.lidar.rate),
        "lidar_max_range": float(sensors.lidar.max_range),
        "range_noise_sigma": float(sensors.lidar.range_noise_sigma),
        "gps_noise_sigma": float(sensors.gps.noise_sigma),
        "wheel_base": float(enc.wheel_base),
        "pulses_per_rev": int(enc.pulses_per_rev),
        "wheel_circumference": float(enc.wheel_circumference),
        "mount_z": float(sensors.mount.translation[2]),
    }
    return SensorLog(events, meta)


# --- directory round trip ---------------------------------------------------


def write_sensor_log(log: SensorLog, outdir) -> None:
    os.makedirs(outdir, exist_ok=True)
    scan_dir = os.path.join(outdir, "scans")
    os.makedirs(scan_dir, exist_ok=True)
    ticks = []
    gps_rows = []
    truth_rows = {}
    scan_no = 0
    with open(os.path.join(outdir, "index.txt"), "w") as fh:
        for key in sorted(log.meta):
            fh.write(f"# {key} {log.meta[key]}\n")
        for ev in log.events:
            if ev.truth is not None:
                truth_rows[f"{ev.time:.9f}"] = ev.truth
            if isinstance(ev, EncoderEvent):
                fh.write(
                    f"{ev.time:.9f} ENCODER {ev.pulses_left} {ev.pulses_right}\n"
                )
                ticks.append(EncoderTick(ev.time, ev.pulses_left, ev.pulses_right))
            elif isinstance(ev, GpsEvent):
                x, y, z = ev.position
                fh.write(f"{ev.time:.9f} GPS {x:.9g} {y:.9g} {z:.9g}\n")
                gps_rows.append((ev.time, ev.position))
            elif isinstance(ev, ScanEvent):
                scan_no += 1
                rel = f"scans/scan_{scan_no:06d}.xyz"
                fh.write(f"{ev.time:.9f} SCAN {rel}\n")
                write_xyz(ev.cloud, os.path.join(outdir, rel))
            else:
                raise InvalidParameterError(f"unknown event {type(ev).__name__}")
    write_encoder_stream(ticks, os.path.join(outdir, "encoder.txt"))
    with open(os.path.join(outdir, "gps.txt"), "w") as fh:
        for t, pos in gps_rows:
            fh.write(f"{t:.9f} {pos[0]:.9g} {pos[1]:.9g} {pos[2]:.9g}\n")
    truth = [
        (float(key), truth_rows[key])
        for key in sorted(truth_rows, key=float)
    ]
    _evaluate.write_trajectory(truth, os.path.join(outdir, "groundtruth.txt"))


def read_sensor_log(indir) -> SensorLog:
    index_path = os.path.join(indir, "index.txt")
    truth_path = os.path.join(indir, "groundtruth.txt")
    truth = {}
    if os.path.exists(truth_path):
        for t, pose in _evaluate.read_trajectory(truth_path):
            truth[f"{t:.9f}"] = pose
    meta: dict = {}
    events: list = []
    with open(index_path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split(None, 1)
                if len(parts) == 2:
                    key, value = parts
                    try:
                        meta[key] = int(value) if value.lstrip("-").isdigit() else float(value)
                    except ValueError:
                        meta[key] = value
                continue
            parts = line.split()
            try:
                t = float(parts[0])
                kind = parts[1]
                pose = truth.get(f"{t:.9f}")
                if kind == "ENCODER":
                    events.append(
                        EncoderEvent(t, int(parts[2]), int(parts[3]), pose)
                    )
                elif kind == "GPS":
                    events.append(
                        GpsEvent(t, np.array([float(v) for v in parts[2:5]]), pose)
                    )
                elif kind == "SCAN":
                    cloud = read_xyz(os.path.join(indir, parts[2]))
                    events.append(
                        ScanEvent(t, PointCloud(cloud.points, timestamp=t), pose)
                    )
                else:
                    raise InvalidParameterError(f"unknown event type {kind!r}")
            except (IndexError, ValueError) as exc:
                raise InvalidParameterError(
                    f"{index_path}:{lineno}: {exc}"
                ) from exc
    return SensorLog(events, meta)


# --- scenario files ---------------------------------------------------------


def scenario_from_dict(data: dict):
    """Build (world, path, sensors, duration, seed) from a scenario mapping."""
    wcfg = data.get("world", {})
    boxes = tuple(
        Box(np.array(b["min"], dtype=float), np.array(b["max"], dtype=float))
        for b in wcfg.get("boxes", [])
    )
    dyn = tuple(
        DynamicBox(
            Box(np.array(b["min"], dtype=float), np.array(b["max"], dtype=float)),
            np.array(b["velocity"], dtype=float),
        )
        for b in wcfg.get("dynamic_boxes", [])
    )
    world = World(boxes, bool(wcfg.get("ground_plane", True)), dyn)
    path = WaypointPath(np.array(data["trajectory"], dtype=float))
    lcfg = data.get("lidar", {})
    lidar = LidarModel(
        channels=int(lcfg.get("channels", 16)),
        vertical_fov=math.radians(float(lcfg.get("vertical_fov_deg", 30.0))),
        horizontal_fov=math.radians(float(lcfg.get("horizontal_fov_deg", 360.0))),
        rays_per_revolution=int(lcfg.get("rays_per_revolution", 720)),
        rate=float(lcfg.get("rate", 10.0)),
        range_noise_sigma=float(lcfg.get("range_noise_sigma", 0.0)),
        max_range=float(lcfg.get("max_range", 100.0)),
    )
    ecfg = data.get("encoder", {})
    encoder = EncoderConfig(
        wheel_base=float(ecfg.get("wheel_base", 0.6)),
        pulses_per_rev=int(ecfg.get("pulses_per_rev", 2048)),
        wheel_circumference=float(ecfg.get("wheel_circumference", 1.57)),
    )
    gcfg = data.get("gps", {})
    gps = GpsModel(
        noise_sigma=float(gcfg.get("noise_sigma", 0.0)),
        rate=float(gcfg.get("rate", 5.0)),
        dropout_intervals=tuple(
            (float(a), float(b)) for a, b in gcfg.get("dropout_intervals", [])
        ),
    )
    mount = Pose3(
        np.array([0.0, 0.0, 0.0, 1.0]),
        np.array([0.0, 0.0, float(lcfg.get("mount_z", 0.0))]),
    )
    sensors = SensorSuite(
        lidar=lidar,
        encoder=encoder,
        gps=gps,
        encoder_rate=float(ecfg.get("rate", 50.0)),
        mount=mount,
    )
    duration = float(data.get("duration", path.end_time))
    seed = int(data.get("seed", 0))
    return world, path, sensors, duration, seed


def load_scenario(path):
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))
