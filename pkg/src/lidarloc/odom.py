"""Differential-drive wheel odometry from quadrature encoder ticks.

Stream files are ASCII, one tick per line: ``timestamp pulses_left
pulses_right`` (seconds, signed pulse counts since the previous line).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidParameterError, OrderingError
from .geom import Pose2


@dataclass(frozen=True)
class EncoderConfig:
    """Geometry of the drive train: track width and pulse scale."""

    wheel_base: float  # lateral wheel separation, m
    pulses_per_rev: int  # encoder pulses per wheel revolution (e.g. a 36-tooth gear)
    wheel_circumference: float  # m

    def __post_init__(self):
        if not self.wheel_base > 0.0:
            raise InvalidParameterError("wheel_base must be > 0")
        if not int(self.pulses_per_rev) > 0:
            raise InvalidParameterError("pulses_per_rev must be > 0")
        if not self.wheel_circumference > 0.0:
            raise InvalidParameterError("wheel_circumference must be > 0")
        object.__setattr__(self, "pulses_per_rev", int(self.pulses_per_rev))

    @property
    def meters_per_pulse(self) -> float:
        return self.wheel_circumference / self.pulses_per_rev


@dataclass(frozen=True)
class EncoderTick:
    timestamp: float
    pulses_left: int
    pulses_right: int


def tick_to_distances(config: EncoderConfig, tick: EncoderTick) -> tuple[float, float]:
    """Arc length travelled by each wheel over one tick, meters."""
    scale = config.meters_per_pulse
    return tick.pulses_left * scale, tick.pulses_right * scale


def integrate(prev: Pose2, d_left: float, d_right: float, wheel_base: float) -> Pose2:
    """Advance a planar pose by one pair of wheel displacements.

    The midpoint distance moves the pose along the current heading and the
    wheel differential turns it.  Deliberate correction: the turn angle is
    (d_right - d_left) / wheel_base, radians.  A transcription one sometimes
    sees writes the turn angle as (d_left + d_right) / 2 -- the same
    expression as the midpoint distance -- which has units of meters and
    cannot be an angle.  Keep the quotient form; do not "simplify" it away.
    """
    if not wheel_base > 0.0:
        raise InvalidParameterError("wheel_base must be > 0")
    d_center = 0.5 * (d_left + d_right)
    phi = (d_right - d_left) / wheel_base
    return Pose2(
        prev.x + d_center * math.cos(prev.theta),
        prev.y + d_center * math.sin(prev.theta),
        prev.theta + phi,
    )


def integrate_stream(
    config: EncoderConfig, start: Pose2, ticks
) -> list[tuple[float, Pose2]]:
    """Fold ``integrate`` over a tick sequence; one output pose per tick."""
    out: list[tuple[float, Pose2]] = []
    pose = start
    last_time = None
    for i, tick in enumerate(ticks):
        if last_time is not None and tick.timestamp <= last_time:
            raise OrderingError(
                f"tick {i} timestamp {tick.timestamp} does not increase "
                f"past {last_time}"
            )
        last_time = tick.timestamp
        d_left, d_right = tick_to_distances(config, tick)
        pose = integrate(pose, d_left, d_right, config.wheel_base)
        out.append((tick.timestamp, pose))
    return out


def read_encoder_stream(path) -> list[EncoderTick]:
    ticks = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise InvalidParameterError(
                    f"{path}:{lineno}: expected 'timestamp pulses_left "
                    f"pulses_right', got {raw.rstrip()!r}"
                )
            try:
                ticks.append(
                    EncoderTick(float(parts[0]), int(parts[1]), int(parts[2]))
                )
            except ValueError as exc:
                raise InvalidParameterError(f"{path}:{lineno}: {exc}") from exc
    return ticks


def write_encoder_stream(ticks, path) -> None:
    with open(path, "w") as fh:
        for tick in ticks:
            fh.write(f"{tick.timestamp:.9f} {tick.pulses_left} {tick.pulses_right}\n")
