"""Simulator: raycasting, event scheduling, determinism, log round trips."""

import math

import numpy as np
import pytest

from lidarloc.errors import InvalidParameterError
from lidarloc.geom import Pose2, Pose3, apply
from lidarloc.odom import EncoderConfig, integrate
from lidarloc.sim import (
    Box,
    DynamicBox,
    EncoderEvent,
    GpsEvent,
    GpsModel,
    LidarModel,
    ScanEvent,
    SensorSuite,
    WaypointPath,
    World,
    mix64,
    raycast_scan,
    read_sensor_log,
    run_scenario,
    scenario_from_dict,
    write_sensor_log,
)

_M64 = (1 << 64) - 1


def splitmix64_next(state: int) -> int:
    """Published SplitMix64 step, written independently as the oracle."""
    z = (state + 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def single_ray_lidar(**kw):
    defaults = dict(
        channels=1,
        vertical_fov=0.0,
        horizontal_fov=0.0,
        rays_per_revolution=1,
        rate=10.0,
        max_range=100.0,
    )
    defaults.update(kw)
    return LidarModel(**defaults)


def simple_suite(**kw):
    defaults = dict(
        lidar=LidarModel(
            channels=4,
            vertical_fov=math.radians(20.0),
            rays_per_revolution=90,
            rate=10.0,
            max_range=50.0,
        ),
        encoder=EncoderConfig(0.6, 2048, 1.57),
        gps=GpsModel(noise_sigma=0.0, rate=5.0),
        encoder_rate=50.0,
    )
    defaults.update(kw)
    return SensorSuite(**defaults)


class TestMix64:
    def test_single_value_matches_splitmix64(self):
        rng = np.random.default_rng(401)
        for v in rng.integers(0, 1 << 63, 100):
            assert mix64(int(v)) == splitmix64_next(int(v))

    def test_chain_folds_one_step_per_value(self):
        rng = np.random.default_rng(402)
        for _ in range(50):
            vals = [int(v) for v in rng.integers(0, 1 << 62, 3)]
            x = 0
            for v in vals:
                x = splitmix64_next(x + v)
            assert mix64(*vals) == x

    def test_order_sensitive(self):
        assert mix64(1, 2) != mix64(2, 1)
        assert mix64(0) != mix64(0, 0)


class TestRaycast:
    def test_single_ray_hits_wall(self):
        world = World(
            boxes=(Box([10.0, -5.0, 0.0], [11.0, 5.0, 4.0]),), ground_plane=False
        )
        pose = Pose3(np.array([0, 0, 0, 1.0]), np.array([0.0, 0.0, 1.0]))
        cloud = raycast_scan(world, pose, single_ray_lidar())
        assert len(cloud) == 1
        np.testing.assert_allclose(cloud.points[0], [10.0, 0.0, 0.0], atol=1e-9)

    def test_empty_world_returns_no_points(self):
        cloud = raycast_scan(
            World(ground_plane=False), Pose3.identity(), single_ray_lidar()
        )
        assert len(cloud) == 0

    def test_max_range_cuts_off(self):
        world = World(
            boxes=(Box([10.0, -5.0, 0.0], [11.0, 5.0, 4.0]),), ground_plane=False
        )
        pose = Pose3(np.array([0, 0, 0, 1.0]), np.array([0.0, 0.0, 1.0]))
        cloud = raycast_scan(world, pose, single_ray_lidar(max_range=9.0))
        assert len(cloud) == 0

    def test_points_land_on_world_surfaces(self):
        world = World(
            boxes=(
                Box([4.0, -6.0, 0.0], [6.0, 6.0, 3.0]),
                Box([-8.0, 2.0, 0.0], [-5.0, 5.0, 2.0]),
            ),
            ground_plane=True,
        )
        pose = Pose3.from_yaw(0.4, (0.5, -0.5, 1.5))
        model = LidarModel(
            channels=8,
            vertical_fov=math.radians(30.0),
            rays_per_revolution=180,
            max_range=40.0,
        )
        cloud = raycast_scan(world, pose, model)
        assert len(cloud) > 100
        world_pts = apply(pose, cloud.points)
        tol = 1e-6
        for p in world_pts:
            on_ground = abs(p[2]) < tol
            on_box = False
            for box in world.boxes:
                inside = np.all(p >= box.min_corner - tol) and np.all(
                    p <= box.max_corner + tol
                )
                margin = min(
                    np.min(np.abs(p - box.min_corner)),
                    np.min(np.abs(p - box.max_corner)),
                )
                if inside and margin < tol:
                    on_box = True
                    break
            assert on_ground or on_box, f"{p} lies on no surface"

    def test_occluding_box_shadows_the_wall(self):
        wall = Box([10.0, -5.0, 0.0], [11.0, 5.0, 4.0])
        blocker = Box([3.0, -1.0, 0.0], [4.0, 1.0, 4.0])
        pose = Pose3(np.array([0, 0, 0, 1.0]), np.array([0.0, 0.0, 1.0]))
        lidar = single_ray_lidar()
        free = raycast_scan(World((wall,), False), pose, lidar)
        blocked = raycast_scan(World((wall, blocker), False), pose, lidar)
        np.testing.assert_allclose(free.points[0], [10.0, 0.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(blocked.points[0], [3.0, 0.0, 0.0], atol=1e-9)

    def test_dynamic_box_moves_with_time(self):
        mover = DynamicBox(
            Box([5.0, -1.0, 0.0], [6.0, 1.0, 3.0]), np.array([1.0, 0.0, 0.0])
        )
        world = World(dynamic_boxes=(mover,), ground_plane=False)
        pose = Pose3(np.array([0, 0, 0, 1.0]), np.array([0.0, 0.0, 1.0]))
        at0 = raycast_scan(world, pose, single_ray_lidar(), time=0.0)
        at2 = raycast_scan(world, pose, single_ray_lidar(), time=2.0)
        np.testing.assert_allclose(at0.points[0], [5.0, 0.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(at2.points[0], [7.0, 0.0, 0.0], atol=1e-9)

    def test_range_noise_is_seed_stable(self):
        world = World(boxes=(Box([8.0, -4.0, 0.0], [9.0, 4.0, 4.0]),))
        pose = Pose3(np.array([0, 0, 0, 1.0]), np.array([0.0, 0.0, 1.0]))
        model = single_ray_lidar(range_noise_sigma=0.05)
        a = raycast_scan(world, pose, model, seed=7)
        b = raycast_scan(world, pose, model, seed=7)
        c = raycast_scan(world, pose, model, seed=8)
        np.testing.assert_array_equal(a.points, b.points)
        assert not np.array_equal(a.points, c.points)


class TestWaypointPath:
    def test_linear_interpolation(self):
        path = WaypointPath([[0.0, 0.0, 0.0, 0.0], [2.0, 4.0, 2.0, 1.0]])
        mid = path.pose2_at(1.0)
        assert (mid.x, mid.y) == (2.0, 1.0)
        assert mid.theta == pytest.approx(0.5)
        assert path.arc_length_at(1.0) == pytest.approx(math.hypot(4.0, 2.0) / 2.0)

    def test_clamps_outside_span(self):
        path = WaypointPath([[1.0, 0.0, 0.0, 0.0], [2.0, 1.0, 0.0, 0.0]])
        assert path.pose2_at(0.0).x == 0.0
        assert path.pose2_at(99.0).x == 1.0
        assert path.end_time == 2.0

    def test_multi_lap_heading_unwraps(self):
        # two full turns entered as wrapped yaw values
        rows = []
        for k in range(9):
            yaw = k * math.pi / 2.0
            rows.append([float(k), math.cos(yaw), math.sin(yaw),
                         math.remainder(yaw, math.tau)])
        path = WaypointPath(rows)
        assert path.heading_at(8.0) == pytest.approx(4.0 * math.pi)
        assert path.heading_at(4.0) == pytest.approx(2.0 * math.pi)

    def test_validation(self):
        with pytest.raises(InvalidParameterError):
            WaypointPath([[0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
        with pytest.raises(InvalidParameterError):
            WaypointPath([[0.0, 0.0, 0.0]])


class TestEventSchedule:
    WORLD = World(boxes=(Box([-20.0, -20.0, 0.0], [-19.0, 20.0, 5.0]),))

    def test_event_counts_and_times(self):
        path = WaypointPath([[0.0, 0.0, 0.0, 0.0], [10.0, 5.0, 0.0, 0.0]])
        log = run_scenario(self.WORLD, path, simple_suite(), duration=10.0, seed=1)
        scans = [e for e in log.events if isinstance(e, ScanEvent)]
        encoders = [e for e in log.events if isinstance(e, EncoderEvent)]
        fixes = [e for e in log.events if isinstance(e, GpsEvent)]
        assert len(scans) == 100
        assert len(encoders) == 500
        assert len(fixes) == 50
        np.testing.assert_allclose(
            [e.time for e in scans], [(k + 1) / 10.0 for k in range(100)]
        )

    def test_coincident_events_order_encoder_gps_scan(self):
        path = WaypointPath([[0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0]])
        suite = SensorSuite(
            lidar=LidarModel(
                channels=1, vertical_fov=0.0, rays_per_revolution=4, rate=5.0
            ),
            encoder=EncoderConfig(0.6, 2048, 1.57),
            gps=GpsModel(noise_sigma=0.0, rate=5.0),
            encoder_rate=5.0,
        )
        log = run_scenario(self.WORLD, path, suite, duration=1.0, seed=0)
        by_time = {}
        for ev in log.events:
            by_time.setdefault(round(ev.time, 9), []).append(type(ev).__name__)
        for names in by_time.values():
            assert names == ["EncoderEvent", "GpsEvent", "ScanEvent"]

    def test_times_never_decrease(self):
        path = WaypointPath([[0.0, 0.0, 0.0, 0.0], [5.0, 3.0, 0.0, 0.0]])
        log = run_scenario(self.WORLD, path, simple_suite(), duration=5.0, seed=3)
        times = [e.time for e in log.events]
        assert all(b >= a for a, b in zip(times, times[1:]))

    def test_duration_validation(self):
        path = WaypointPath([[0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0]])
        with pytest.raises(InvalidParameterError):
            run_scenario(self.WORLD, path, simple_suite(), duration=0.0)


class TestEncoderTruth:
    def test_straight_run_recovers_distance_within_one_quantum(self):
        path = WaypointPath([[0.0, 0.0, 0.0, 0.0], [5.0, 10.0, 0.0, 0.0]])
        suite = simple_suite()
        log = run_scenario(
            World(ground_plane=False), path, suite, duration=5.0, seed=0
        )
        quantum = suite.encoder.meters_per_pulse
        pose = Pose2(0.0, 0.0, 0.0)
        for ev in log.events:
            if isinstance(ev, EncoderEvent):
                pose = integrate(
                    pose,
                    ev.pulses_left * quantum,
                    ev.pulses_right * quantum,
                    suite.encoder.wheel_base,
                )
        assert abs(pose.x - 10.0) <= quantum + 1e-9
        assert abs(pose.y) < 1e-9
        assert abs(pose.theta) < 1e-9

    def test_quantization_error_never_exceeds_quantum(self):
        # wiggly path: per-wheel cumulative pulse count stays within one
        # quantum of the true wheel arc length at every tick
        rows = [[0.0, 0.0, 0.0, 0.0]]
        for k in range(1, 21):
            t = 0.5 * k
            rows.append([t, 0.6 * t, math.sin(0.4 * t), 0.3 * math.sin(t)])
        path = WaypointPath(rows)
        suite = simple_suite()
        quantum = suite.encoder.meters_per_pulse
        half_base = 0.5 * suite.encoder.wheel_base
        log = run_scenario(
            World(ground_plane=False), path, suite, duration=10.0, seed=0
        )
        yaw0 = path.heading_at(0.0)
        cum_l = cum_r = 0
        for ev in log.events:
            if not isinstance(ev, EncoderEvent):
                continue
            cum_l += ev.pulses_left
            cum_r += ev.pulses_right
            s = path.arc_length_at(ev.time)
            dyaw = path.heading_at(ev.time) - yaw0
            true_l = s - half_base * dyaw
            true_r = s + half_base * dyaw
            assert 0.0 <= true_l - cum_l * quantum < quantum + 1e-9
            assert 0.0 <= true_r - cum_r * quantum < quantum + 1e-9


class TestGps:
    PATH = WaypointPath([[0.0, 0.0, 0.0, 0.0], [10.0, 10.0, 0.0, 0.0]])
    WORLD = World(ground_plane=False)

    def test_zero_noise_reports_sensor_truth(self):
        mount = Pose3(np.array([0, 0, 0, 1.0]), np.array([0.0, 0.0, 1.8]))
        suite = simple_suite(mount=mount)
        log = run_scenario(self.WORLD, self.PATH, suite, duration=10.0, seed=5)
        for ev in log.events:
            if isinstance(ev, GpsEvent):
                np.testing.assert_allclose(ev.position, ev.truth.translation)
                assert ev.position[2] == pytest.approx(1.8)

    def test_dropout_suppresses_exactly_the_window(self):
        suite = simple_suite(
            gps=GpsModel(noise_sigma=0.0, rate=5.0, dropout_intervals=((2.0, 4.0),))
        )
        log = run_scenario(self.WORLD, self.PATH, suite, duration=10.0, seed=5)
        times = [e.time for e in log.events if isinstance(e, GpsEvent)]
        assert len(times) == 40  # 50 nominal minus 10 in [2, 4)
        assert all(not (2.0 <= t < 4.0) for t in times)
        assert 4.0 in times  # half-open window: the end instant survives

    def test_dropout_leaves_surviving_fixes_identical(self):
        noisy = GpsModel(noise_sigma=0.1, rate=5.0)
        gappy = GpsModel(
            noise_sigma=0.1, rate=5.0, dropout_intervals=((2.0, 4.0),)
        )
        log_a = run_scenario(
            self.WORLD, self.PATH, simple_suite(gps=noisy), duration=10.0, seed=9
        )
        log_b = run_scenario(
            self.WORLD, self.PATH, simple_suite(gps=gappy), duration=10.0, seed=9
        )
        fixes_a = {
            round(e.time, 9): e.position
            for e in log_a.events
            if isinstance(e, GpsEvent)
        }
        for ev in log_b.events:
            if isinstance(ev, GpsEvent):
                np.testing.assert_array_equal(ev.position, fixes_a[round(ev.time, 9)])

    def test_model_validation(self):
        with pytest.raises(InvalidParameterError):
            GpsModel(noise_sigma=-0.1, rate=5.0)
        with pytest.raises(InvalidParameterError):
            GpsModel(noise_sigma=0.0, rate=5.0, dropout_intervals=((4.0, 2.0),))


class TestDeterminism:
    def scenario(self):
        world = World(
            boxes=(
                Box([-12.0, -12.0, 0.0], [12.0, -11.0, 4.0]),
                Box([6.0, 2.0, 0.0], [8.0, 4.0, 3.0]),
            )
        )
        path = WaypointPath([[0.0, 0.0, 0.0, 0.0], [4.0, 6.0, 1.0, 0.3]])
        suite = simple_suite(
            lidar=LidarModel(
                channels=4,
                vertical_fov=math.radians(20.0),
                rays_per_revolution=90,
                rate=10.0,
                range_noise_sigma=0.02,
                max_range=50.0,
            ),
            gps=GpsModel(noise_sigma=0.05, rate=5.0),
        )
        return world, path, suite

    def test_same_seed_same_log_bytes(self, tmp_path):
        world, path, suite = self.scenario()
        dirs = []
        for name in ("a", "b"):
            log = run_scenario(world, path, suite, duration=4.0, seed=123)
            out = tmp_path / name
            write_sensor_log(log, out)
            dirs.append(out)
        files_a = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(dirs[1]) for p in dirs[1].rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (dirs[0] / rel).read_bytes() == (dirs[1] / rel).read_bytes(), rel

    def test_different_seed_differs(self):
        world, path, suite = self.scenario()
        log_a = run_scenario(world, path, suite, duration=2.0, seed=1)
        log_b = run_scenario(world, path, suite, duration=2.0, seed=2)
        scans_a = [e.cloud.points for e in log_a.events if isinstance(e, ScanEvent)]
        scans_b = [e.cloud.points for e in log_b.events if isinstance(e, ScanEvent)]
        assert any(
            a.shape != b.shape or not np.array_equal(a, b)
            for a, b in zip(scans_a, scans_b)
        )

    def test_log_round_trip(self, tmp_path):
        world, path, suite = self.scenario()
        log = run_scenario(world, path, suite, duration=3.0, seed=77)
        out = tmp_path / "log"
        write_sensor_log(log, out)
        back = read_sensor_log(out)
        assert back.meta["seed"] == 77
        assert back.meta["wheel_base"] == pytest.approx(0.6)
        assert back.meta["pulses_per_rev"] == 2048
        assert len(back.events) == len(log.events)
        for orig, echo in zip(log.events, back.events):
            assert type(orig).__name__ == type(echo).__name__
            assert echo.time == pytest.approx(orig.time, abs=1e-9)
            if isinstance(orig, EncoderEvent):
                assert (echo.pulses_left, echo.pulses_right) == (
                    orig.pulses_left, orig.pulses_right
                )
            elif isinstance(orig, GpsEvent):
                np.testing.assert_allclose(
                    echo.position, orig.position, rtol=1e-8, atol=1e-7
                )
            else:
                assert len(echo.cloud) == len(orig.cloud)
                np.testing.assert_allclose(
                    echo.cloud.points, orig.cloud.points, rtol=1e-8, atol=1e-6
                )
            assert echo.truth is not None


class TestScenarioFiles:
    def test_dict_round_trip(self):
        data = {
            "world": {
                "boxes": [{"min": [0, 0, 0], "max": [1, 1, 1]}],
                "dynamic_boxes": [
                    {"min": [2, 2, 0], "max": [3, 3, 1], "velocity": [0.5, 0, 0]}
                ],
                "ground_plane": False,
            },
            "trajectory": [[0, 0, 0, 0], [5, 4, 0, 0]],
            "lidar": {"channels": 8, "rate": 5.0, "mount_z": 1.2},
            "encoder": {"wheel_base": 0.5, "rate": 20.0},
            "gps": {"noise_sigma": 0.03, "rate": 2.0},
            "duration": 4.5,
            "seed": 42,
        }
        world, path, sensors, duration, seed = scenario_from_dict(data)
        assert len(world.boxes) == 1 and len(world.dynamic_boxes) == 1
        assert world.ground_plane is False
        assert path.end_time == 5.0
        assert sensors.lidar.channels == 8
        assert sensors.lidar.rate == 5.0
        assert sensors.mount.translation[2] == pytest.approx(1.2)
        assert sensors.encoder.wheel_base == 0.5
        assert sensors.encoder_rate == 20.0
        assert sensors.gps.noise_sigma == 0.03
        assert (duration, seed) == (4.5, 42)

    def test_duration_defaults_to_path_end(self):
        world, path, sensors, duration, seed = scenario_from_dict(
            {"trajectory": [[0, 0, 0, 0], [7.5, 1, 0, 0]]}
        )
        assert duration == 7.5
        assert seed == 0
