#!/usr/bin/env python3
"""Regenerate the bundled demo scenarios under scenarios/.

Two worlds are written:

* ``estate.json`` -- a ~100 m x 100 m walled compound with a central block,
  perimeter houses, and a rounded-rectangle patrol loop driven at 7 m/s on
  the straights and 4 m/s through the corners.
* ``mini.json`` -- a 40 m x 40 m yard with a smaller loop, sized so a 30 s
  replay at 50 Hz encoder / 10 Hz lidar stays cheap in CI.

Both files are deterministic; rerunning this script reproduces them byte
for byte.
"""

import json
import math
import os

OUT_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "scenarios")

CORNER_STEP_DEG = 5.0


def box(xmin, ymin, zmin, xmax, ymax, zmax):
    return {"min": [xmin, ymin, zmin], "max": [xmax, ymax, zmax]}


def ring_walls(half, thickness, height):
    h, t = half, thickness
    return [
        box(-h, h - t, 0.0, h, h, height),  # north
        box(-h, -h, 0.0, h, -h + t, height),  # south
        box(h - t, -h, 0.0, h, h, height),  # east
        box(-h, -h, 0.0, -h + t, h, height),  # west
    ]


def rounded_rect_loop(straight_half, corner_radius, v_straight, v_corner):
    """CCW rounded-rectangle waypoints [(t, x, y, yaw)] starting east-side.

    The lane runs at +-(straight_half) with quarter-circle corners of the
    given radius centered at +-(straight_half - corner_radius).
    """
    a = straight_half
    c = a - corner_radius
    pts = []  # (x, y, yaw, speed_to_here)

    def corner(cx, cy, alpha0):
        steps = int(round(90.0 / CORNER_STEP_DEG))
        for k in range(1, steps + 1):
            alpha = alpha0 + math.radians(CORNER_STEP_DEG) * k
            pts.append(
                (
                    cx + corner_radius * math.cos(alpha),
                    cy + corner_radius * math.sin(alpha),
                    alpha + math.pi / 2.0,
                    v_corner,
                )
            )

    pts.append((a, -c, math.pi / 2.0, v_straight))
    pts.append((a, c, math.pi / 2.0, v_straight))
    corner(c, c, 0.0)
    pts.append((-c, a, math.pi, v_straight))
    corner(-c, c, math.pi / 2.0)
    pts.append((-a, -c, 3.0 * math.pi / 2.0, v_straight))
    corner(-c, -c, math.pi)
    pts.append((c, -a, 2.0 * math.pi, v_straight))
    corner(c, -c, 3.0 * math.pi / 2.0)

    waypoints = []
    t = 0.0
    prev = None
    for x, y, yaw, speed in pts:
        if prev is not None:
            t += math.hypot(x - prev[0], y - prev[1]) / speed
        waypoints.append([round(t, 9), round(x, 9), round(y, 9), round(yaw, 9)])
        prev = (x, y)
    return waypoints


def estate():
    boxes = ring_walls(50.0, 1.0, 3.0)
    boxes.append(box(-15.0, -15.0, 0.0, 15.0, 15.0, 6.0))  # central block
    # buttress ribs on the block faces: vertical edges every few meters so
    # scan matching is constrained along the straights, not just across them
    for off in (-10.0, -3.0, 4.0, 11.0):
        boxes.append(box(15.0, off, 0.0, 15.8, off + 1.0, 6.0))
        boxes.append(box(-15.8, off, 0.0, -15.0, off + 1.0, 6.0))
        boxes.append(box(off, 15.0, 0.0, off + 1.0, 15.8, 6.0))
        boxes.append(box(off, -15.8, 0.0, off + 1.0, -15.0, 6.0))
    # perimeter houses, one per side
    boxes.append(box(40.0, -8.0, 0.0, 46.0, 8.0, 4.0))
    boxes.append(box(-46.0, -8.0, 0.0, -40.0, 8.0, 4.0))
    boxes.append(box(-8.0, 40.0, 0.0, 8.0, 46.0, 4.0))
    boxes.append(box(-8.0, -46.0, 0.0, 8.0, -40.0, 4.0))
    # fence posts protruding from the boundary walls
    for off in (-44.0, -36.0, -28.0, -20.0, -12.0, 12.0, 20.0, 28.0, 36.0, 44.0):
        boxes.append(box(47.6, off - 0.3, 0.0, 49.0, off + 0.3, 3.0))
        boxes.append(box(-49.0, off - 0.3, 0.0, -47.6, off + 0.3, 3.0))
        boxes.append(box(off - 0.3, 47.6, 0.0, off + 0.3, 49.0, 3.0))
        boxes.append(box(off - 0.3, -49.0, 0.0, off + 0.3, -47.6, 3.0))
    # corner sheds outside the loop
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            x0, x1 = sorted((sx * 37.0, sx * 44.0))
            y0, y1 = sorted((sy * 37.0, sy * 44.0))
            boxes.append(box(x0, y0, 0.0, x1, y1, 3.5))
    # pillars just inside the loop corners and beside the straights
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            boxes.append(
                box(sx * 20.0 - 0.5, sy * 20.0 - 0.5, 0.0, sx * 20.0 + 0.5, sy * 20.0 + 0.5, 2.5)
            )
    for s in (1.0, -1.0):
        boxes.append(box(s * 28.0 - 0.4, -0.4, 0.0, s * 28.0 + 0.4, 0.4, 2.5))
        boxes.append(box(-0.4, s * 28.0 - 0.4, 0.0, 0.4, s * 28.0 + 0.4, 2.5))
    # crates scattered around the yard, asymmetric on purpose
    for cx, cy in (
        (30.0, 8.0),
        (30.0, -14.0),
        (8.0, 30.0),
        (-12.0, 30.0),
        (-30.0, 10.0),
        (-30.0, -16.0),
        (-6.0, -30.0),
        (14.0, -30.0),
    ):
        boxes.append(box(cx - 0.7, cy - 0.7, 0.0, cx + 0.7, cy + 0.7, 1.4))

    waypoints = rounded_rect_loop(35.0, 10.0, 7.0, 4.0)
    duration = round(waypoints[-1][0] - 0.25, 3)
    return {
        "world": {"ground_plane": True, "boxes": boxes},
        "trajectory": waypoints,
        "lidar": {
            "channels": 16,
            "vertical_fov_deg": 30.0,
            "horizontal_fov_deg": 360.0,
            "rays_per_revolution": 720,
            "rate": 10.0,
            "range_noise_sigma": 0.02,
            "max_range": 30.0,
            "mount_z": 1.8,
        },
        "encoder": {
            "wheel_base": 0.6,
            "pulses_per_rev": 2048,
            "wheel_circumference": 1.57,
            "rate": 50.0,
        },
        "gps": {"noise_sigma": 0.02, "rate": 10.0, "dropout_intervals": []},
        "duration": duration,
        "seed": 20240817,
    }


def mini():
    boxes = ring_walls(20.0, 1.0, 3.0)
    boxes.append(box(-5.0, -5.0, 0.0, 5.0, 5.0, 4.0))  # central block
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            boxes.append(
                box(sx * 9.0 - 0.4, sy * 9.0 - 0.4, 0.0, sx * 9.0 + 0.4, sy * 9.0 + 0.4, 2.5)
            )
    boxes.append(box(15.0, -4.0, 0.0, 18.0, 4.0, 3.0))
    boxes.append(box(-18.0, -4.0, 0.0, -15.0, 4.0, 3.0))
    boxes.append(box(-4.0, 15.0, 0.0, 4.0, 18.0, 3.0))
    boxes.append(box(-4.0, -18.0, 0.0, 4.0, -15.0, 3.0))

    waypoints = rounded_rect_loop(12.0, 6.0, 3.0, 2.0)
    return {
        "world": {"ground_plane": True, "boxes": boxes},
        "trajectory": waypoints,
        "lidar": {
            "channels": 8,
            "vertical_fov_deg": 20.0,
            "horizontal_fov_deg": 360.0,
            "rays_per_revolution": 360,
            "rate": 10.0,
            "range_noise_sigma": 0.02,
            "max_range": 25.0,
            "mount_z": 1.5,
        },
        "encoder": {
            "wheel_base": 0.6,
            "pulses_per_rev": 2048,
            "wheel_circumference": 1.57,
            "rate": 50.0,
        },
        "gps": {"noise_sigma": 0.02, "rate": 10.0, "dropout_intervals": []},
        "duration": 30.0,
        "seed": 7,
    }


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    for name, scenario in (("estate.json", estate()), ("mini.json", mini())):
        path = os.path.join(OUT_DIR, name)
        with open(path, "w") as fh:
            json.dump(scenario, fh, indent=2)
            fh.write("\n")
        print(f"wrote {os.path.normpath(path)} "
              f"(path ends at t={scenario['trajectory'][-1][0]:.2f} s, "
              f"duration {scenario['duration']} s)")


if __name__ == "__main__":
    main()
