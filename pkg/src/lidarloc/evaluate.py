"""Trajectory comparison metrics, timing capture, and the report tables.

Trajectory files are ASCII: ``timestamp tx ty tz qx qy qz qw`` per line,
``#`` comments allowed.  The headline error signal is planar:
``e(t) = hypot(ex, ey)`` against the linearly interpolated reference.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .errors import AlignmentError, EmptyInputError, InvalidParameterError
from .geom import Pose3, relative, rotation_angle

log = logging.getLogger(__name__)

REPORT_PERCENTILES = (50.0, 66.7, 95.0)


def read_trajectory(path) -> list[tuple[float, Pose3]]:
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 8:
                raise InvalidParameterError(
                    f"{path}:{lineno}: expected 8 fields, got {len(parts)}"
                )
            try:
                vals = [float(v) for v in parts]
            except ValueError as exc:
                raise InvalidParameterError(f"{path}:{lineno}: {exc}") from exc
            rows.append(
                (vals[0], Pose3(np.array(vals[4:8]), np.array(vals[1:4])))
            )
    return rows


def write_trajectory(trajectory, path) -> None:
    with open(path, "w") as fh:
        for t, pose in trajectory:
            tx, ty, tz = pose.translation
            qx, qy, qz, qw = pose.quaternion
            fh.write(
                f"{t:.9f} {tx:.9g} {ty:.9g} {tz:.9g} "
                f"{qx:.9g} {qy:.9g} {qz:.9g} {qw:.9g}\n"
            )


def _split(trajectory):
    if len(trajectory) == 0:
        raise EmptyInputError("empty trajectory")
    times = np.array([t for t, _ in trajectory], dtype=float)
    order = np.argsort(times, kind="stable")
    times = times[order]
    poses = [trajectory[i][1] for i in order]
    positions = np.array([p.translation for p in poses])
    return times, positions, poses


def error_series(estimate, ground_truth) -> list[tuple[float, float]]:
    """Planar position error at every estimate time inside the truth span."""
    est_t, est_p, _ = _split(estimate)
    gt_t, gt_p, _ = _split(ground_truth)
    keep = (est_t >= gt_t[0]) & (est_t <= gt_t[-1])
    if not np.any(keep):
        raise AlignmentError("estimate and ground truth do not overlap in time")
    t = est_t[keep]
    ex = est_p[keep, 0] - np.interp(t, gt_t, gt_p[:, 0])
    ey = est_p[keep, 1] - np.interp(t, gt_t, gt_p[:, 1])
    return list(zip(t.tolist(), np.hypot(ex, ey).tolist()))


def _values(series) -> np.ndarray:
    arr = np.asarray(series, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, 1]
    return arr


@dataclass(frozen=True)
class ErrorStats:
    mean: float
    median: float
    rmse: float
    std: float  # population convention, so mean^2 + std^2 == rmse^2
    min: float
    sample_count: int


def stats(series) -> ErrorStats:
    values = _values(series)
    if values.size == 0:
        raise EmptyInputError("no error samples")
    return ErrorStats(
        mean=float(values.mean()),
        median=float(np.median(values)),
        rmse=float(math.sqrt(np.mean(values**2))),
        std=float(values.std()),
        min=float(values.min()),
        sample_count=int(values.size),
    )


def percentile(series, q: float) -> float:
    values = _values(series)
    if values.size == 0:
        raise EmptyInputError("no error samples")
    return float(np.percentile(values, q))


@dataclass(frozen=True)
class SegmentError:
    length: float
    translation_pct: float  # mean norm of the relative translation error / length
    rotation_deg_per_m: float
    segments: int


def _interp_poses(times, trajectory):
    src_t, src_p, src_poses = _split(trajectory)
    if len(src_poses) == 1:
        return [src_poses[0] for _ in times]
    rots = Rotation.from_quat(np.array([p.quaternion for p in src_poses]))
    slerp = Slerp(src_t, rots)
    clamped = np.clip(times, src_t[0], src_t[-1])
    quats = slerp(clamped).as_quat()
    out = []
    for k, t in enumerate(times):
        pos = [np.interp(t, src_t, src_p[:, ax]) for ax in range(3)]
        out.append(Pose3(quats[k], np.array(pos)))
    return out


def error_by_length(estimate, ground_truth, segment_lengths) -> list[SegmentError]:
    """Relative drift over fixed path lengths, averaged across all starts.

    For each start pose the end pose is the first one at least ``length``
    meters of reference path away; the error transform between the
    reference and estimated relative motions yields a translation error
    in percent and a rotation error in degrees per meter.  Lengths longer
    than the trajectory produce a zero-segment row and a warning.
    """
    gt_t, gt_p, gt_poses = _split(ground_truth)
    est_t, _, _ = _split(estimate)
    cum = np.concatenate(
        [[0.0], np.cumsum(np.linalg.norm(np.diff(gt_p, axis=0), axis=1))]
    )
    inside = (gt_t >= est_t[0]) & (gt_t <= est_t[-1])
    if not np.any(inside):
        raise AlignmentError("estimate and ground truth do not overlap in time")
    est_at_gt = _interp_poses(gt_t, estimate)
    rows = []
    for length in segment_lengths:
        if not length > 0.0:
            raise InvalidParameterError("segment lengths must be > 0")
        t_errs = []
        r_errs = []
        ends = np.searchsorted(cum, cum + float(length))
        for s in range(len(gt_t)):
            e = int(ends[s])
            if e >= len(gt_t) or not (inside[s] and inside[e]):
                continue
            gt_rel = relative(gt_poses[s], gt_poses[e])
            est_rel = relative(est_at_gt[s], est_at_gt[e])
            err = relative(gt_rel, est_rel)
            span = cum[e] - cum[s]
            t_errs.append(float(np.linalg.norm(err.translation)) / span * 100.0)
            r_errs.append(math.degrees(rotation_angle(err)) / span)
        if not t_errs:
            log.warning("no segment of length %.1f m fits the trajectory", length)
            rows.append(SegmentError(float(length), float("nan"), float("nan"), 0))
        else:
            rows.append(
                SegmentError(
                    float(length),
                    float(np.mean(t_errs)),
                    float(np.mean(r_errs)),
                    len(t_errs),
                )
            )
    return rows


# --- timing -----------------------------------------------------------------

TIMING_BUCKET_SECONDS = 0.010
TIMING_BUCKET_MAX = 0.200


@dataclass(frozen=True, eq=False)
class TimingRecord:
    """Per-call wall times plus a fixed histogram (10 ms buckets to 200 ms)."""

    seconds: np.ndarray
    counts: np.ndarray  # 20 in-range buckets + 1 overflow

    @staticmethod
    def from_seconds(seconds) -> "TimingRecord":
        arr = np.asarray(seconds, dtype=float).reshape(-1)
        if arr.size and (np.any(~np.isfinite(arr)) or np.any(arr < 0.0)):
            raise InvalidParameterError("timings must be finite and >= 0")
        edges = np.arange(0.0, TIMING_BUCKET_MAX + 1e-12, TIMING_BUCKET_SECONDS)
        counts, _ = np.histogram(arr, bins=edges)
        overflow = int(np.sum(arr >= TIMING_BUCKET_MAX))
        return TimingRecord(arr, np.concatenate([counts, [overflow]]))

    @property
    def sample_count(self) -> int:
        return int(self.seconds.size)

    def percentile(self, q: float) -> float:
        if self.seconds.size == 0:
            raise EmptyInputError("no timing samples")
        return float(np.percentile(self.seconds, q))


def format_timing_report(record: TimingRecord) -> str:
    lines = ["# per-scan processing time histogram", "bucket_ms count"]
    n = record.counts.size - 1
    for k in range(n):
        lo = int(round(k * TIMING_BUCKET_SECONDS * 1000))
        hi = int(round((k + 1) * TIMING_BUCKET_SECONDS * 1000))
        lines.append(f"{lo:03d}-{hi:03d} {int(record.counts[k])}")
    lines.append(f">={int(TIMING_BUCKET_MAX * 1000)} {int(record.counts[-1])}")
    if record.sample_count:
        lines.append(f"p95_ms {record.percentile(95.0) * 1000.0:.3f}")
        lines.append(f"samples {record.sample_count}")
    return "\n".join(lines) + "\n"


def format_stats_report(series) -> str:
    """Two-column metric/value table for a planar error series."""
    s = stats(series)
    rows = [
        ("mean_m", s.mean),
        ("median_m", s.median),
        ("rmse_m", s.rmse),
        ("std_m", s.std),
        ("min_m", s.min),
    ]
    for q in REPORT_PERCENTILES:
        label = f"p{q:g}_m"
        rows.append((label, percentile(series, q)))
    lines = ["metric value"]
    for name, value in rows:
        lines.append(f"{name} {value:.6f}")
    lines.append(f"samples {s.sample_count}")
    return "\n".join(lines) + "\n"


def write_series_csv(series, path) -> None:
    with open(path, "w") as fh:
        fh.write("time_s,error_m\n")
        for t, e in series:
            fh.write(f"{t:.9f},{e:.9g}\n")
