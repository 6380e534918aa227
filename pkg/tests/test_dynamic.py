import math

import numpy as np
import pytest
from pydantic import ValidationError

from lifemap.dynamic import (
    DynRemovalParams,
    OccupancyGrid,
    classify_by_occupancy,
    evaluate_pr_rr_f1,
    f1_score,
    integrate_scan,
    radial_reassign,
    remove_dynamic,
    remove_dynamic_labeled,
    restore_planes,
    vote_unknown,
)
from lifemap.geom import Label, PointCloud, Pose
from lifemap.mapio import Frame, SessionMap
from lifemap.synth import Box, DynamicObject, Scene, SimConfig, make_session, straight_trajectory

S, D, U = int(Label.STATIC), int(Label.DYNAMIC), int(Label.UNKNOWN)


def _labeled(points, labels) -> PointCloud:
    return PointCloud(np.asarray(points, dtype=float), np.asarray(labels, dtype=np.uint8))


def _voxel_center(i: int, size: float = 0.2) -> list:
    return [size * i + size / 2, size / 2, size / 2]


# ============================================================
# Parameters
# ============================================================


class TestParams:
    def test_defaults_are_valid(self):
        params = DynRemovalParams()
        assert params.l_hit == pytest.approx(math.log(0.7 / 0.3))
        assert params.l_occ == pytest.approx(0.0)

    @pytest.mark.parametrize("field,value", [("p_hit", 0.4), ("p_miss", 0.6), ("knn_radius", 0.0), ("voxel_size", -1.0)])
    def test_out_of_range(self, field, value):
        with pytest.raises(ValidationError):
            DynRemovalParams(**{field: value})

    def test_window_outside_usual_range_is_allowed(self):
        assert DynRemovalParams(submap_window=5).submap_window == 5


# ============================================================
# Occupancy
# ============================================================


class TestOccupancy:
    def test_straight_axis_ray(self):
        grid = OccupancyGrid(voxel_size=0.2)
        grid.integrate([0.0, 0.0, 0.0], [[1.0, 0.0, 0.0]])
        odds = grid.log_odds([_voxel_center(i) for i in range(6)])
        assert np.isnan(odds[0])
        assert np.allclose(odds[1:5], grid.l_miss)
        assert odds[5] == pytest.approx(grid.l_hit)
        assert len(grid) == 5

    def test_hit_twice_missed_once(self):
        grid = OccupancyGrid(voxel_size=0.2, p_hit=0.7, p_miss=0.4)
        grid.integrate([0, 0, 0], [[1.0, 0.0, 0.0]])
        grid.integrate([0, 0, 0], [[1.0, 0.0, 0.0]])
        grid.integrate([0, 0, 0], [[2.0, 0.0, 0.0]])
        value = grid.log_odds([_voxel_center(5)])[0]
        assert value == pytest.approx(2 * math.log(0.7 / 0.3) + math.log(0.4 / 0.6))
        assert value == pytest.approx(1.289, abs=1e-3)
        assert grid.classify([_voxel_center(5)])[0] == S

    def test_untouched_voxel_is_unknown(self):
        grid = OccupancyGrid(voxel_size=0.2)
        grid.integrate([0, 0, 0], [[1.0, 0.0, 0.0]])
        assert np.isnan(grid.log_odds([[5.0, 5.0, 5.0]])[0])
        assert grid.classify([[5.0, 5.0, 5.0]])[0] == U

    def test_values_stay_clamped(self):
        grid = OccupancyGrid(voxel_size=0.2)
        for _ in range(50):
            grid.integrate([0, 0, 0], [[1.0, 0.0, 0.0]])
        assert grid.values.max() <= grid.l_max + 1e-12
        assert grid.values.min() >= grid.l_min - 1e-12
        assert grid.log_odds([_voxel_center(5)])[0] == pytest.approx(grid.l_max)

    def test_hit_wins_within_one_scan(self):
        grid = OccupancyGrid(voxel_size=0.2)
        # the second ray passes through the first ray's endpoint voxel
        grid.integrate([0, 0, 0], [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        assert grid.log_odds([_voxel_center(5)])[0] == pytest.approx(grid.l_hit)

    def test_object_that_left_becomes_dynamic(self):
        grid = OccupancyGrid(voxel_size=0.2)
        grid.integrate([0, 0, 0], [[1.0, 0.0, 0.0]])
        for _ in range(3):
            grid.integrate([0, 0, 0], [[3.0, 0.0, 0.0]])
        cloud = classify_by_occupancy(grid, PointCloud(np.array([[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]])))
        assert cloud.labels.tolist() == [D, S]

    def test_far_returns_only_clear_space(self):
        grid = OccupancyGrid(voxel_size=0.2, max_range=1.0)
        grid.integrate([0, 0, 0], [[3.0, 0.0, 0.0]])
        assert np.isnan(grid.log_odds([[3.0, 0.0, 0.0]])[0])
        assert grid.log_odds([_voxel_center(2)])[0] == pytest.approx(grid.l_miss)
        assert (grid.values < 0).all()

    def test_integrate_scan_wrapper(self):
        grid = OccupancyGrid.from_params(DynRemovalParams())
        integrate_scan(grid, [0, 0, 0], PointCloud(np.array([[1.0, 0.0, 0.0]])))
        assert grid.scans == 1


# ============================================================
# Plane restoration
# ============================================================


class TestRestorePlanes:
    def _submap(self, rng):
        ground = np.column_stack([rng.uniform(0, 10, 830), rng.uniform(0, 10, 830), np.zeros(830)])
        wall = np.column_stack([np.full(150, 12.0), rng.uniform(0, 10, 150), rng.uniform(0.5, 3.0, 150)])
        sign = np.column_stack([rng.uniform(0, 4, 20), np.full(20, 20.0), rng.uniform(0.5, 3.0, 20)])
        return np.vstack([ground, wall, sign])

    def test_ratio_check(self, rng):
        points = self._submap(rng)
        session = SessionMap("s", (Frame(Pose.identity(), PointCloud(points)),))
        labeled = _labeled(points, np.full(len(points), D))
        params = DynRemovalParams(submap_window=10, plane_ratio_thr=0.10, plane_dist_thr=0.05)
        out = restore_planes(session, labeled, params, rng)
        assert (out.labels[:830] == S).all()
        assert (out.labels[830:980] == S).all()
        assert (out.labels[980:] == D).all()

    def test_tiny_submap_skipped(self):
        points = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        session = SessionMap("s", (Frame(Pose.identity(), PointCloud(points)),))
        labeled = _labeled(points, [D, D])
        out = restore_planes(session, labeled, DynRemovalParams(submap_window=10))
        assert out.labels.tolist() == [D, D]

    def test_mismatched_map_rejected(self):
        session = SessionMap("s", (Frame(Pose.identity(), PointCloud(np.zeros((3, 3)))),))
        with pytest.raises(ValueError):
            restore_planes(session, _labeled(np.zeros((4, 3)), [D] * 4), DynRemovalParams())


# ============================================================
# Voting and reassignment
# ============================================================


class TestVoteUnknown:
    def _ring(self, labels):
        angles = np.linspace(0, 2 * np.pi, len(labels), endpoint=False)
        ring = np.column_stack([0.2 * np.cos(angles), 0.2 * np.sin(angles), np.zeros(len(labels))])
        return _labeled(np.vstack([[[0.0, 0.0, 0.0]], ring]), [U, *labels])

    def test_majority_static(self):
        out = vote_unknown(self._ring([S] * 5 + [D] * 2), DynRemovalParams(knn_k=7))
        assert out.labels[0] == S

    def test_majority_dynamic(self):
        out = vote_unknown(self._ring([S] * 2 + [D] * 5), DynRemovalParams(knn_k=7))
        assert out.labels[0] == D

    def test_tie_is_static(self):
        out = vote_unknown(self._ring([S] * 3 + [D] * 3), DynRemovalParams(knn_k=6))
        assert out.labels[0] == S

    def test_no_neighbour_in_radius(self):
        cloud = _labeled([[0, 0, 0], [5, 0, 0]], [U, D])
        out = vote_unknown(cloud, DynRemovalParams(knn_radius=0.5))
        assert out.labels.tolist() == [S, D]

    def test_no_unknown_left(self, rng):
        cloud = _labeled(rng.uniform(0, 1, (200, 3)), rng.integers(0, 3, 200))
        assert (vote_unknown(cloud, DynRemovalParams()).labels != U).all()


class TestRadialReassign:
    def test_near_static_flips(self):
        cloud = _labeled([[0, 0, 0], [0.05, 0, 0]], [S, D])
        out = radial_reassign(cloud, DynRemovalParams(reassign_radius=0.1, reassign_min_neighbors=1))
        assert out.labels.tolist() == [S, S]

    def test_isolated_blob_unchanged(self):
        cloud = _labeled([[0, 0, 0], [1, 0, 0], [1.05, 0, 0]], [S, D, D])
        out = radial_reassign(cloud, DynRemovalParams(reassign_radius=0.1, reassign_min_neighbors=1))
        assert out.labels.tolist() == [S, D, D]

    def test_no_cascade(self):
        cloud = _labeled([[0, 0, 0], [0.08, 0, 0], [0.16, 0, 0], [0.24, 0, 0]], [S, D, D, D])
        out = radial_reassign(cloud, DynRemovalParams(reassign_radius=0.1, reassign_min_neighbors=1))
        assert out.labels.tolist() == [S, S, D, D]


# ============================================================
# Metrics
# ============================================================


class TestMetrics:
    def test_f1_from_rates(self):
        assert f1_score(0.9471, 0.9712) == pytest.approx(0.9590, abs=1e-4)

    def test_perfect(self):
        truth = _labeled(np.zeros((4, 3)), [S, S, D, D])
        assert evaluate_pr_rr_f1(truth, truth) == (1.0, 1.0, 1.0)

    def test_no_dynamic_truth(self):
        truth = _labeled(np.zeros((2, 3)), [S, S])
        pr, rr, f1 = evaluate_pr_rr_f1(truth, truth)
        assert pr == 1.0 and rr is None and f1 is None

    def test_mixed(self):
        truth = _labeled(np.zeros((4, 3)), [S, S, D, D])
        predicted = _labeled(np.zeros((4, 3)), [S, D, D, S])
        assert evaluate_pr_rr_f1(predicted, truth) == (0.5, 0.5, 0.5)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            evaluate_pr_rr_f1(_labeled(np.zeros((1, 3)), [S]), _labeled(np.zeros((2, 3)), [S, S]))


# ============================================================
# Whole pipeline
# ============================================================


def _yard(frames: int, moving: bool) -> Scene:
    walls = (
        Box("wall-n", (0.0, 9.0, 2.0), (30.0, 1.0, 4.0)),
        Box("wall-s", (0.0, -9.0, 2.0), (30.0, 1.0, 4.0)),
        Box("kiosk", (3.0, 4.0, 1.25), (2.0, 2.0, 2.5)),
    )
    dynamics = ()
    if moving:
        centers = np.column_stack([8.0 - 1.2 * np.arange(frames), np.full(frames, -3.0), np.full(frames, 1.05)])
        dynamics = (DynamicObject("van", (3.0, 1.8, 1.5), centers),)
    return Scene(static_objects=walls, dynamic_objects=dynamics)


_SIM = SimConfig(horizontal_rays=240, vertical_rays=16, vertical_fov=40.0, max_range=30.0, seed=3)


class TestRemoveDynamic:
    def test_partition_invariants(self):
        frames = 10
        session, truth = make_session(_yard(frames, True), straight_trajectory(frames, step=1.0), _SIM)
        result = remove_dynamic_labeled(session, DynRemovalParams(submap_window=10))
        counts = result.counts
        assert counts["static"] + counts["dynamic"] + counts["outliers"] == len(truth)
        assert (result.labeled.labels != U).all()
        static, dynamic = remove_dynamic(session, DynRemovalParams(submap_window=10))
        assert len(static) == counts["static"]
        assert len(dynamic) == counts["dynamic"]

    def test_single_frame_ground_is_static(self):
        session, truth = make_session(_yard(1, False), straight_trajectory(1), _SIM)
        result = remove_dynamic_labeled(session, DynRemovalParams(submap_window=10))
        ground = np.abs(truth.points[:, 2]) < 0.05
        assert ground.sum() > 100
        assert (result.labeled.labels[ground] == S).all()

    def test_timings_recorded(self):
        session, _ = make_session(_yard(2, False), straight_trajectory(2), _SIM)
        timings = dict()
        remove_dynamic_labeled(session, DynRemovalParams(submap_window=10), timings)
        assert {"occupancy", "planes", "vote", "reassign"} <= set(timings)

    @pytest.mark.slow
    def test_moving_van_is_removed(self):
        frames = 16
        session, truth = make_session(_yard(frames, True), straight_trajectory(frames, step=1.0), _SIM)
        result = remove_dynamic_labeled(session, DynRemovalParams(submap_window=16))
        pr, rr, _ = evaluate_pr_rr_f1(result.labeled, truth)
        assert rr >= 0.90
        assert pr >= 0.95

    @pytest.mark.slow
    def test_static_scene_keeps_almost_everything(self):
        frames = 16
        session, truth = make_session(_yard(frames, False), straight_trajectory(frames, step=1.0), _SIM)
        static, dynamic = remove_dynamic(session, DynRemovalParams(submap_window=16))
        assert len(dynamic) < 0.02 * len(truth)

    @pytest.mark.slow
    def test_long_drive_with_two_movers(self):
        frames = 200
        static = (
            Box("wall-n", (0.0, 9.0, 2.0), (60.0, 1.0, 4.0)),
            Box("wall-s", (0.0, -9.0, 2.0), (60.0, 1.0, 4.0)),
            Box("kiosk", (3.0, 6.5, 1.25), (2.0, 2.0, 2.5)),
            Box("bin", (-12.0, 6.5, 0.6), (1.0, 1.0, 1.2)),
            Box("shed", (14.0, -6.5, 1.5), (3.0, 2.0, 3.0)),
            Box("crate", (-4.0, -6.5, 0.5), (1.5, 1.5, 1.0)),
        )
        steps = np.arange(frames)
        van = np.column_stack([18.0 - 0.3 * steps, np.full(frames, -3.0), np.full(frames, 1.05)])
        car = np.column_stack([-22.0 + 0.35 * steps, np.full(frames, 3.0), np.full(frames, 0.95)])
        scene = Scene(
            static_objects=static,
            dynamic_objects=(DynamicObject("van", (3.0, 1.8, 1.5), van), DynamicObject("car", (4.0, 1.8, 1.5), car)),
        )
        sim = SimConfig(horizontal_rays=180, vertical_rays=16, vertical_fov=40.0, max_range=30.0, seed=5)
        session, truth = make_session(scene, straight_trajectory(frames, step=0.2), sim)
        result = remove_dynamic_labeled(session, DynRemovalParams())
        pr, rr, f1 = evaluate_pr_rr_f1(result.labeled, truth)
        assert pr >= 0.95
        assert rr >= 0.90
        assert f1 >= 0.92
