import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from lifemap.errors import DegenerateInput
from lifemap.geom import (
    PointCloud,
    Pose,
    SpatialIndex,
    chamfer_distance,
    estimate_normals,
    extract_planes,
    hull_crop,
    hull_of,
    radius_neighbors,
    ransac_plane,
    statistical_outlier_removal,
    transform,
    voxel_downsample,
)
from lifemap.geom.filters import OUTSIDE, pack_keys
from lifemap.geom.hull import format_hull, parse_hull
from tests.conftest import grid_plane


# ============================================================
# Types
# ============================================================


class TestPointCloud:
    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((4, 2)))

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[0.0, np.nan, 0.0]]))

    def test_arrays_are_read_only(self):
        cloud = PointCloud(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            cloud.points[0, 0] = 1.0

    def test_source_array_is_not_frozen(self):
        src = np.zeros((2, 3))
        PointCloud(src)
        src[0, 0] = 1.0
        assert src[0, 0] == 1.0

    def test_concat_drops_labels_unless_all_labeled(self):
        a = PointCloud(np.zeros((1, 3)), [0])
        b = PointCloud(np.ones((1, 3)))
        assert PointCloud.concat([a, b]).labels is None
        assert PointCloud.concat([a, a]).labels.tolist() == [0, 0]

    def test_as_float32_is_idempotent(self, rng):
        cloud = PointCloud(rng.normal(size=(50, 3))).as_float32()
        assert np.array_equal(cloud.points, cloud.as_float32().points)


class TestPose:
    def test_quaternion_is_normalized(self):
        pose = Pose(np.array([2.0, 0.0, 0.0, 0.0]))
        assert np.allclose(pose.rotation, [1, 0, 0, 0])

    def test_compose_and_inverse(self, rng):
        rot = Rotation.from_rotvec(rng.normal(size=3))
        pose = Pose.from_rotation(rot, rng.normal(size=3))
        points = rng.normal(size=(20, 3))
        back = pose.inverse().apply(pose.apply(points))
        assert np.allclose(back, points, atol=1e-9)
        both = pose @ pose
        assert np.allclose(both.apply(points), pose.apply(pose.apply(points)), atol=1e-9)

    def test_from_matrix_row_round_trip(self, rng):
        pose = Pose.from_rotation(Rotation.from_rotvec([0.1, -0.2, 0.3]), [1.0, 2.0, 3.0])
        again = Pose.from_matrix(pose.as_row().reshape(3, 4))
        dt, dr = pose.distance(again)
        assert dt < 1e-12
        assert dr < 1e-9


# ============================================================
# Spatial index
# ============================================================


class TestSpatialIndex:
    def test_radius_excludes_far_point(self):
        index = SpatialIndex(PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0]])))
        assert radius_neighbors(index, [0, 0, 0], 0.5).tolist() == [0]

    def test_radius_contains_query_point(self):
        index = SpatialIndex(PointCloud(np.array([[0.5, 0.5, 0.5], [3.0, 0, 0]])))
        assert 0 in radius_neighbors(index, [0.5, 0.5, 0.5], 1e-6)

    def test_radius_matches_brute_force(self, rng):
        points = rng.uniform(0, 1, size=(1000, 3))
        index = SpatialIndex(PointCloud(points))
        for query in rng.uniform(0, 1, size=(100, 3)):
            expected = np.flatnonzero(np.linalg.norm(points - query, axis=1) <= 0.2)
            assert np.array_equal(radius_neighbors(index, query, 0.2), expected)

    def test_rejects_non_positive_radius(self):
        index = SpatialIndex(PointCloud(np.zeros((1, 3))))
        with pytest.raises(ValueError):
            radius_neighbors(index, [0, 0, 0], 0.0)

    def test_empty_index(self):
        index = SpatialIndex(PointCloud.empty())
        dist, idx = index.nearest(np.zeros((2, 3)))
        assert np.isinf(dist).all()
        assert not index.has_neighbor(np.zeros((1, 3)), 10.0).any()


# ============================================================
# Filters
# ============================================================


class TestVoxelDownsample:
    def test_cube_corners_collapse_to_centroid(self):
        corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
        out = voxel_downsample(PointCloud(corners), 2.0)
        assert np.allclose(out.points, [[0.5, 0.5, 0.5]])

    def test_fine_cell_keeps_every_point(self):
        cloud = PointCloud(grid_plane(10, spacing=1.0))
        assert len(voxel_downsample(cloud, 0.5)) == len(cloud)

    def test_two_points_one_voxel(self):
        out = voxel_downsample(PointCloud(np.array([[0.1, 0, 0], [0.3, 0, 0]])), 0.5)
        assert np.allclose(out.points, [[0.2, 0, 0]])

    def test_empty(self):
        assert voxel_downsample(PointCloud.empty(), 0.1).is_empty

    def test_one_point_per_voxel_inside_its_voxel(self, rng):
        cloud = PointCloud(rng.uniform(-3, 3, size=(2000, 3)))
        cell = 0.7
        out = voxel_downsample(cloud, cell)
        keys = np.floor(out.points / cell)
        assert len(np.unique(keys, axis=0)) == len(out)
        assert len(out) == len(np.unique(np.floor(cloud.points / cell), axis=0))

    def test_rejects_non_positive_cell(self):
        with pytest.raises(ValueError):
            voxel_downsample(PointCloud(np.zeros((1, 3))), 0.0)

    def test_georeferenced_coordinates(self):
        cloud = PointCloud(np.array([[500000.02, 4000000.03, 10.03], [500000.07, 4000000.03, 10.03]]))
        out = voxel_downsample(cloud, 0.1)
        assert np.allclose(out.points, [[500000.045, 4000000.03, 10.03]])

    def test_span_wider_than_packing(self):
        cloud = PointCloud(np.array([[300000.0, 0.0, 0.0], [0.01, 0.0, 0.0], [0.02, 0.0, 0.0]]))
        out = voxel_downsample(cloud, 0.1)
        assert np.allclose(out.points, [[0.015, 0.0, 0.0], [300000.0, 0.0, 0.0]])


class TestPackKeys:
    def test_relative_to_anchor(self):
        keys = np.array([[5000000, 40000000, 100], [5000001, 40000000, 100]])
        codes = pack_keys(keys, anchor=keys[0])
        assert codes[0] < codes[1]
        with pytest.raises(ValueError):
            pack_keys(keys)

    def test_outside_window(self):
        codes = pack_keys(np.array([[0, 0, 0], [1 << 22, 0, 0]]), strict=False)
        assert codes[0] >= 0
        assert codes[1] == OUTSIDE


class TestNormals:
    def test_plane_normals_are_vertical(self):
        normals, valid = estimate_normals(PointCloud(grid_plane(15)), 10)
        assert valid.all()
        assert np.allclose(np.abs(normals[:, 2]), 1.0, atol=1e-6)

    def test_neighbors_clamped_to_cloud_size(self):
        cloud = PointCloud(grid_plane(3))
        normals, valid = estimate_normals(cloud, 100)
        assert valid.all()
        assert np.allclose(np.abs(normals[:, 2]), 1.0, atol=1e-6)

    def test_sphere_normals_are_radial(self, rng):
        pts = rng.normal(size=(4000, 3))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        normals, valid = estimate_normals(PointCloud(pts), 12)
        cos = np.abs(np.einsum("ij,ij->i", normals[valid], pts[valid]))
        assert np.median(cos) > math.cos(math.radians(5))

    def test_collinear_neighbourhood_is_invalid(self):
        line = np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)])
        _, valid = estimate_normals(PointCloud(line), 4)
        assert not valid.any()

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            estimate_normals(PointCloud(np.zeros((2, 3))), 5)


class TestOutlierRemoval:
    def test_far_point_removed(self):
        grid = grid_plane(10, spacing=1.0)
        cloud = PointCloud(np.vstack([grid, [[50.0, 50.0, 0.0]]]))
        out = statistical_outlier_removal(cloud, 8, 1.0)
        assert len(out) == 100
        assert np.array_equal(out.points, grid)

    def test_uniform_lattice_unchanged(self):
        angles = np.linspace(0, 2 * np.pi, 60, endpoint=False)
        ring = PointCloud(np.column_stack([np.cos(angles), np.sin(angles), np.zeros(60)]))
        assert len(statistical_outlier_removal(ring, 4, 1.0)) == 60

    def test_small_cloud_unchanged(self):
        cloud = PointCloud(np.eye(3))
        assert statistical_outlier_removal(cloud, 8, 1.0) is cloud


class TestTransform:
    def test_identity(self, rng):
        cloud = PointCloud(rng.normal(size=(5, 3)), [0, 1, 0, 1, 2])
        out = transform(cloud, Pose.identity())
        assert np.allclose(out.points, cloud.points)
        assert np.array_equal(out.labels, cloud.labels)

    def test_translation(self):
        out = transform(PointCloud(np.zeros((1, 3))), Pose(translation=[1.0, 0, 0]))
        assert np.allclose(out.points, [[1, 0, 0]])

    def test_inverse_restores(self, rng):
        cloud = PointCloud(rng.normal(size=(30, 3)))
        pose = Pose.from_rotation(Rotation.from_rotvec([0.3, 0.1, -0.5]), [4.0, -1.0, 2.0])
        back = transform(transform(cloud, pose), pose.inverse())
        assert np.allclose(back.points, cloud.points, atol=1e-9)


# ============================================================
# Planes
# ============================================================


class TestRansacPlane:
    def test_dominant_plane_with_outliers(self, rng):
        plane = np.column_stack([rng.uniform(0, 10, 900), rng.uniform(0, 10, 900), np.zeros(900)])
        outliers = rng.uniform([0, 0, 0.5], [10, 10, 5], size=(100, 3))
        model = ransac_plane(PointCloud(np.vstack([plane, outliers])), 0.05, rng=rng)
        assert np.allclose(np.abs(model.normal), [0, 0, 1], atol=1e-6)
        assert len(model.inlier_indices) >= 900

    def test_two_points_degenerate(self):
        with pytest.raises(DegenerateInput):
            ransac_plane(PointCloud(np.zeros((2, 3))), 0.1)

    def test_larger_of_two_parallel_planes_first(self, rng):
        low = np.column_stack([rng.uniform(0, 10, 600), rng.uniform(0, 10, 600), np.zeros(600)])
        high = np.column_stack([rng.uniform(0, 10, 400), rng.uniform(0, 10, 400), np.full(400, 3.0)])
        planes = extract_planes(PointCloud(np.vstack([low, high])), 0.05, 0.1, rng=rng)
        assert len(planes[0].inlier_indices) == 600
        assert len(planes) == 2
        assert len(planes[1].inlier_indices) == 400

    def test_noise_free_generators_all_inliers(self, rng):
        pts = grid_plane(20, spacing=0.5)
        tilt = Pose.from_rotation(Rotation.from_rotvec([0.2, -0.1, 0.0]), [0, 0, 1.0])
        model = ransac_plane(PointCloud(tilt.apply(pts)), 0.01, rng=rng)
        assert len(model.inlier_indices) == len(pts)
        assert np.abs(model.signed_distance(tilt.apply(pts))).max() <= 0.01

    def test_ratio_threshold_stops_extraction(self, rng):
        low = np.column_stack([rng.uniform(0, 10, 950), rng.uniform(0, 10, 950), np.zeros(950)])
        high = np.column_stack([rng.uniform(0, 10, 50), rng.uniform(0, 10, 50), np.full(50, 3.0)])
        planes = extract_planes(PointCloud(np.vstack([low, high])), 0.05, 0.1, rng=rng)
        assert len(planes) == 1


# ============================================================
# Hulls
# ============================================================


class TestHull:
    def test_crop_unit_square(self):
        square = PointCloud(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float))
        hull = hull_of(square)
        query = PointCloud(np.array([[0.5, 0.5, 7.0], [2.0, 2.0, 0.0]]))
        assert np.allclose(hull_crop(query, hull).points, [[0.5, 0.5, 7.0]])
        assert hull.area == pytest.approx(1.0)

    def test_hull_keeps_its_generators(self, rng):
        cloud = PointCloud(rng.normal(size=(500, 3)))
        assert len(hull_crop(cloud, hull_of(cloud))) == len(cloud)

    def test_collinear_is_degenerate(self):
        with pytest.raises(DegenerateInput):
            hull_of(PointCloud(np.array([[0, 0, 0], [1, 1, 0], [2, 2, 5]], dtype=float)))

    def test_text_round_trip(self, rng):
        hull = hull_of(PointCloud(rng.normal(size=(100, 3))))
        again = parse_hull(format_hull(hull))
        assert np.array_equal(again.vertices, hull.vertices)


# ============================================================
# Chamfer distance
# ============================================================


class TestChamfer:
    def test_identical_clouds(self, rng):
        cloud = PointCloud(rng.normal(size=(100, 3)))
        assert chamfer_distance(cloud, cloud) == 0.0

    def test_single_pair(self):
        a = PointCloud(np.zeros((1, 3)))
        b = PointCloud(np.array([[0.3, 0.0, 0.0]]))
        assert chamfer_distance(a, b, 0.5) == pytest.approx(0.18)

    def test_all_filtered_is_infinite(self):
        a = PointCloud(np.zeros((1, 3)))
        b = PointCloud(np.array([[1.0, 0.0, 0.0]]))
        assert math.isinf(chamfer_distance(a, b, 0.5))

    def test_empty_is_infinite(self):
        assert math.isinf(chamfer_distance(PointCloud.empty(), PointCloud(np.zeros((1, 3)))))

    def test_symmetric_and_rigid_invariant(self, rng):
        a = PointCloud(rng.uniform(0, 2, size=(300, 3)))
        b = PointCloud(a.points + rng.normal(0, 0.05, size=a.points.shape))
        pose = Pose.from_rotation(Rotation.from_rotvec([0.4, 0.2, -0.3]), [10.0, -5.0, 2.0])
        ab = chamfer_distance(a, b)
        assert ab == pytest.approx(chamfer_distance(b, a), abs=1e-12)
        assert ab == pytest.approx(chamfer_distance(transform(a, pose), transform(b, pose)), abs=1e-9)
