"""Command-line front end: simulate, build-map, localize, evaluate, downsample.

Every option can also be supplied through ``--config file.json`` whose keys
mirror the long option names (dashes as underscores); explicit flags win.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import cloud, evaluate, graph, locate, odom, sim
from .errors import LidarLocError
from .geom import Pose2, Pose3, compose, embed_planar
from .icp import IcpParams

log = logging.getLogger("lidarloc")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="lidarloc", description=__doc__)
    parser.add_argument("--config", help="JSON file with default option values")
    parser.add_argument("--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a scenario into a sensor log")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("outdir", help="sensor log directory to create")

    p = sub.add_parser("build-map", help="pose-graph map from a sensor log")
    p.add_argument("logdir", help="sensor log directory")
    p.add_argument("map_out", help="output map cloud (.xyz)")
    p.add_argument("traj_out", help="output keyframe trajectory file")
    p.add_argument("--voxel", type=float, default=0.2, help="map voxel size, m")
    p.add_argument(
        "--keyframe-distance", type=float, default=1.0, help="keyframe spacing, m"
    )
    p.add_argument("--no-gps", action="store_true", help="drop GPS constraints")
    p.add_argument(
        "--no-loop-closure", action="store_true", help="skip loop detection"
    )

    p = sub.add_parser("localize", help="replay a log against a prior map")
    p.add_argument("map", help="prior map cloud (.xyz)")
    p.add_argument("logdir", help="sensor log directory")
    p.add_argument("traj_out", help="output fused trajectory file")
    p.add_argument(
        "--half-fov",
        action="store_true",
        help="mask each scan to the forward 180 degrees",
    )
    p.add_argument(
        "--no-gps",
        action="store_true",
        help="ignore GPS records (the online filter never consumes them anyway)",
    )
    p.add_argument("--scan-voxel", type=float, default=0.3, help="scan thinning, m")
    p.add_argument("--delta", type=float, default=1.0, help="ICP trim distance, m")
    p.add_argument(
        "--icp-eps",
        type=float,
        default=1e-3,
        help="ICP convergence step (m and rad); replay-grade, looser than "
        "the library default",
    )
    p.add_argument(
        "--index-voxel",
        type=float,
        default=0.05,
        help="voxel for indexing the loaded map (small keeps it intact)",
    )
    p.add_argument("--gain-position", type=float, default=0.8)
    p.add_argument("--gain-heading", type=float, default=0.6)
    p.add_argument(
        "--init",
        nargs=4,
        type=float,
        metavar=("X", "Y", "Z", "YAW"),
        help="start pose; defaults to the log's first ground-truth pose",
    )
    p.add_argument("--timing", help="write the per-scan timing histogram here")
    p.add_argument("--plot-dir", help="also render figures into this directory")

    p = sub.add_parser("evaluate", help="compare a trajectory against a reference")
    p.add_argument("estimate", help="estimated trajectory file")
    p.add_argument("reference", help="reference trajectory file")
    p.add_argument("--csv", help="write the error series as CSV")
    p.add_argument(
        "--by-length",
        action="store_true",
        help="also report drift over fixed path lengths",
    )
    p.add_argument(
        "--lengths",
        default="10,25,50,100",
        help="comma-separated segment lengths for --by-length, m",
    )
    p.add_argument("--plot-dir", help="also render figures into this directory")

    p = sub.add_parser("downsample", help="voxel-thin a cloud file")
    p.add_argument("cloud_in")
    p.add_argument("cloud_out")
    p.add_argument("--voxel", type=float, required=True, help="voxel size, m")

    return parser


def _apply_config(parser: _Parser, argv: list[str]) -> None:
    if "--config" not in argv:
        return
    path = argv[argv.index("--config") + 1] if argv.index("--config") + 1 < len(argv) else None
    if path is None:
        raise _UsageError("--config needs a file path")
    try:
        with open(path) as fh:
            values = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(values, dict):
        raise _UsageError("config JSON must be an object")
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            sp.set_defaults(**values)


def _cmd_simulate(args) -> int:
    world, path, sensors, duration, seed = sim.load_scenario(args.scenario)
    log_data = sim.run_scenario(world, path, sensors, duration, seed)
    sim.write_sensor_log(log_data, args.outdir)
    print(f"wrote {len(log_data.events)} events to {args.outdir}")
    return 0


def _mount_lift(meta) -> Pose3:
    z = float(meta.get("mount_z", 0.0))
    return Pose3(np.array([0.0, 0.0, 0.0, 1.0]), np.array([0.0, 0.0, z]))


def _cmd_build_map(args) -> int:
    if not args.voxel > 0.0:
        raise _UsageError("--voxel must be > 0")
    if not args.keyframe_distance > 0.0:
        raise _UsageError("--keyframe-distance must be > 0")
    log_data = sim.read_sensor_log(args.logdir)
    meta = log_data.meta
    enc = odom.EncoderConfig(
        wheel_base=float(meta["wheel_base"]),
        pulses_per_rev=int(meta["pulses_per_rev"]),
        wheel_circumference=float(meta["wheel_circumference"]),
    )
    lift = _mount_lift(meta)
    dr = Pose2(0.0, 0.0, 0.0)
    keyframes = []
    kf_times = []
    gps_fixes = []  # (time, position)
    last_kf_xy = None
    for ev in log_data.events:
        if isinstance(ev, sim.EncoderEvent):
            d_l, d_r = odom.tick_to_distances(
                enc, odom.EncoderTick(ev.time, ev.pulses_left, ev.pulses_right)
            )
            dr = odom.integrate(dr, d_l, d_r, enc.wheel_base)
        elif isinstance(ev, sim.GpsEvent):
            if not args.no_gps:
                gps_fixes.append((ev.time, ev.position))
        elif isinstance(ev, sim.ScanEvent):
            xy = (dr.x, dr.y)
            if last_kf_xy is not None:
                moved = float(np.hypot(xy[0] - last_kf_xy[0], xy[1] - last_kf_xy[1]))
                if moved < args.keyframe_distance:
                    continue
            keyframes.append((compose(embed_planar(dr), lift), ev.cloud))
            kf_times.append(ev.time)
            last_kf_xy = xy
    gps_edges = []
    if gps_fixes:
        g_times = np.array([t for t, _ in gps_fixes])
        tol = 0.5 / float(meta.get("gps_rate", 5.0))
        sigma = max(float(meta.get("gps_noise_sigma", 0.0)), 1e-3)
        info = graph.gps_information(sigma)
        for k, t in enumerate(kf_times):
            j = int(np.argmin(np.abs(g_times - t)))
            if abs(g_times[j] - t) <= tol:
                gps_edges.append(graph.GpsEdge(k, gps_fixes[j][1], info))
    params = graph.MapParams(
        voxel_size=args.voxel,
        use_loop_closure=not args.no_loop_closure,
    )
    trajectory, map_cloud = graph.build_map(keyframes, gps_edges, params)
    cloud.write_xyz(map_cloud, args.map_out)
    evaluate.write_trajectory(list(zip(kf_times, trajectory)), args.traj_out)
    print(
        f"map: {len(map_cloud)} points from {len(keyframes)} keyframes "
        f"({len(gps_edges)} GPS constraints) -> {args.map_out}"
    )
    return 0


def _cmd_localize(args) -> int:
    if args.scan_voxel < 0.0:
        raise _UsageError("--scan-voxel must be >= 0 (0 disables thinning)")
    for name in ("delta", "index_voxel", "icp_eps"):
        if not getattr(args, name) > 0.0:
            raise _UsageError(f"--{name.replace('_', '-')} must be > 0")
    map_cloud = cloud.read_xyz(args.map)
    map_index = cloud.build_index(map_cloud, args.index_voxel)
    log_data = sim.read_sensor_log(args.logdir)
    meta = log_data.meta
    if args.init is not None:
        x, y, z, yaw = args.init
        initial = compose(
            embed_planar(Pose2(x, y, yaw)),
            Pose3(np.array([0, 0, 0, 1.0]), np.array([0.0, 0.0, z])),
        )
    else:
        truth_file = os.path.join(args.logdir, "groundtruth.txt")
        truth = evaluate.read_trajectory(truth_file)
        if not truth:
            raise _UsageError(
                "log has no ground truth; provide --init X Y Z YAW"
            )
        initial = truth[0][1]
    config = locate.LocalizerConfig(
        lidar_range=float(meta.get("lidar_max_range", 100.0)),
        scan_period=1.0 / float(meta.get("lidar_rate", 10.0)),
        scan_voxel_size=args.scan_voxel,
        sskf_gain_position=args.gain_position,
        sskf_gain_heading=args.gain_heading,
        icp=IcpParams(
            delta=args.delta,
            translation_epsilon=args.icp_eps,
            rotation_epsilon=args.icp_eps,
        ),
    )
    run = locate.run_sensor_log(
        map_index, log_data, config, initial, half_fov=args.half_fov
    )
    evaluate.write_trajectory(run.fused, args.traj_out)
    if args.timing:
        with open(args.timing, "w") as fh:
            fh.write(evaluate.format_timing_report(run.timing))
    if args.plot_dir:
        os.makedirs(args.plot_dir, exist_ok=True)
        from . import figures

        figures.save_timing_histogram(
            run.timing, os.path.join(args.plot_dir, "timing_hist.png")
        )
    n = run.timing.sample_count
    p95 = run.timing.percentile(95.0) * 1000.0 if n else float("nan")
    print(
        f"fused {len(run.fused)} poses from {n} scans "
        f"({run.rejected} rejected), p95 scan time {p95:.1f} ms"
    )
    return 0


def _cmd_evaluate(args) -> int:
    est = evaluate.read_trajectory(args.estimate)
    ref = evaluate.read_trajectory(args.reference)
    series = evaluate.error_series(est, ref)
    sys.stdout.write(evaluate.format_stats_report(series))
    if args.csv:
        evaluate.write_series_csv(series, args.csv)
    if args.by_length:
        try:
            lengths = [float(v) for v in args.lengths.split(",") if v.strip()]
        except ValueError as exc:
            raise _UsageError(f"bad --lengths: {exc}") from exc
        if not lengths:
            raise _UsageError("--lengths must name at least one length")
        rows = evaluate.error_by_length(est, ref, lengths)
        print("length_m trans_err_pct rot_err_deg_per_m segments")
        for row in rows:
            print(
                f"{row.length:g} {row.translation_pct:.4f} "
                f"{row.rotation_deg_per_m:.6f} {row.segments}"
            )
    if args.plot_dir:
        os.makedirs(args.plot_dir, exist_ok=True)
        from . import figures

        figures.save_error_series(
            series, os.path.join(args.plot_dir, "error_series.png")
        )
        figures.save_trajectory_overlay(
            est, ref, os.path.join(args.plot_dir, "trajectory.png")
        )
    return 0


def _cmd_downsample(args) -> int:
    if not args.voxel > 0.0:
        raise _UsageError("--voxel must be > 0")
    data = cloud.read_xyz(args.cloud_in)
    thin = cloud.voxel_downsample(data, args.voxel)
    cloud.write_xyz(thin, args.cloud_out)
    print(f"{len(data)} -> {len(thin)} points at voxel {args.voxel:g} m")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "build-map": _cmd_build_map,
    "localize": _cmd_localize,
    "evaluate": _cmd_evaluate,
    "downsample": _cmd_downsample,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and friends
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (LidarLocError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


# same callable under the name the rest of the docs use for the entry point
cli = main


if __name__ == "__main__":
    sys.exit(main())
