import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import march_cells, march_grid_first
from seal.geometry import (CameraModel, DimensionMismatch, OriginOutsideGrid, PointCloud, Pose,
                           camera_rays, depth_to_pointcloud, ego_to_geo, first_hit, geo_to_ego,
                           project_points, traverse_ray)

CAM = CameraModel()


def test_pose_normalizes_heading():
    assert Pose(0, 0, 360.0).theta == 0.0
    assert Pose(0, 0, -30.0).theta == 330.0
    assert Pose(0, 0, 750.0).theta == 30.0
    with pytest.raises(ValueError):
        Pose(float("nan"), 0.0)


def test_camera_validation():
    with pytest.raises(ValueError):
        CameraModel(hfov=180.0)
    with pytest.raises(ValueError):
        CameraModel(depth_min=5.0, depth_max=5.0)
    with pytest.raises(ValueError):
        CameraModel(width_px=0)


def test_center_pixel_backprojects_on_principal_ray():
    depth = np.zeros(CAM.shape)
    depth[64, 64] = 2.0
    cloud = depth_to_pointcloud(depth, CAM)
    assert len(cloud) == 1
    np.testing.assert_allclose(cloud.points[0], [2.0, 0.0, 0.88], atol=1e-12)
    assert tuple(cloud.pixels[0]) == (64, 64)


def test_all_invalid_depth_gives_empty_cloud():
    assert len(depth_to_pointcloud(np.zeros(CAM.shape), CAM)) == 0
    assert len(depth_to_pointcloud(np.full(CAM.shape, 9.0), CAM)) == 0


def test_leftmost_column_lateral_offset_matches_angle_table():
    # brute-force per-pixel angle: column c looks atan((W/2 - c) / f) to the left
    f = (CAM.width_px / 2) / math.tan(math.radians(CAM.hfov / 2))
    angles = [math.degrees(math.atan((CAM.width_px / 2 - c) / f)) for c in range(CAM.width_px)]
    assert angles[0] == pytest.approx(45.0)  # pixel-0 edge ray sits on the 45 degree boundary
    depth = np.zeros(CAM.shape)
    depth[64, 0] = 2.0
    p = depth_to_pointcloud(depth, CAM).points[0]
    assert p[1] == pytest.approx(2.0 * math.tan(math.radians(angles[0])), abs=1e-12)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        depth_to_pointcloud(np.zeros((10, 10)), CAM)


def test_ego_to_geo_examples():
    c = PointCloud(np.array([[3.0, 0.0, 1.0]]), np.zeros((1, 2), dtype=np.int64))
    np.testing.assert_allclose(ego_to_geo(c, Pose(0, 0, 0)).points, c.points)
    np.testing.assert_allclose(ego_to_geo(c, Pose(1, 2, 90)).points, [[1.0, 5.0, 1.0]], atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0, 359.99),
       st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10), st.floats(-3, 3)), min_size=1, max_size=20))
def test_geo_ego_round_trip(x, y, th, pts):
    pose = Pose(x, y, th)
    c = PointCloud(np.array(pts), np.zeros((len(pts), 2), dtype=np.int64))
    back = geo_to_ego(ego_to_geo(c, pose), pose)
    np.testing.assert_allclose(back.points, c.points, atol=1e-9)


def test_reprojection_recovers_pixels():
    rng = np.random.default_rng(0)
    depth = rng.uniform(0.3, 4.9, CAM.shape)
    cloud = depth_to_pointcloud(depth, CAM)
    rc = project_points(cloud.points, CAM)
    # continuous coordinates of the pixel the ray went through
    assert np.all(np.abs(rc - cloud.pixels) <= 0.5 + 1e-9)


def test_traverse_axis_aligned():
    cells = traverse_ray([0.025, 0.025, 0.025], [1.0, 0.0, 0.0], (10, 4, 4), 0.05)
    np.testing.assert_array_equal(cells[:, 0], np.arange(10))
    assert np.all(cells[:, 1:] == 0)


def test_traverse_diagonal_alternates():
    d = np.array([1.0, 1.0, 0.0]) / math.sqrt(2)
    cells = traverse_ray([0.026, 0.024, 0.025], d, (8, 8, 2), 0.05)
    steps = np.diff(cells, axis=0)
    assert np.all(np.abs(steps).sum(axis=1) == 1)
    assert np.all(steps[:, 2] == 0)
    axes = np.argmax(np.abs(steps), axis=1)
    assert np.all(axes[1:] != axes[:-1])


def test_traverse_outward_from_face_is_empty():
    assert len(traverse_ray([0.0, 0.1, 0.1], [-1.0, 0.0, 0.0], (4, 4, 4), 0.05)) == 0


def test_traverse_errors():
    with pytest.raises(OriginOutsideGrid):
        traverse_ray([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], (4, 4, 4), 0.05)
    with pytest.raises(ValueError):
        traverse_ray([0.1, 0.1, 0.1], [1.0, 1.0, 0.0], (4, 4, 4), 0.05)


def _chord(o, d, cell, vs):
    t0, t1 = 0.0, np.inf
    for a in range(3):
        lo, hi = cell[a] * vs, (cell[a] + 1) * vs
        if d[a] == 0:
            continue
        ta, tb = sorted(((lo - o[a]) / d[a], (hi - o[a]) / d[a]))
        t0, t1 = max(t0, ta), min(t1, tb)
    return max(0.0, t1 - t0)


def test_traverse_matches_fine_march_on_random_rays():
    rng = np.random.default_rng(1)
    dims = (12, 10, 8)
    vs = 0.05
    for _ in range(1000):
        o = rng.uniform(0, 1, 3) * np.array(dims) * vs
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        got = [tuple(c) for c in traverse_ray(o, d, dims, vs).tolist()]
        ref = march_cells(o, d, dims, vs, step=1e-4)
        assert set(ref) <= set(got)
        # the march can only miss cells the ray clips for less than its step
        for cell in set(got) - set(ref):
            assert _chord(o, d, cell, vs) < 1e-4
        steps = np.abs(np.diff(np.array(got), axis=0)).sum(axis=1) if len(got) > 1 else np.array([1])
        assert np.all(steps == 1), "traversal must be gap-free"


def test_first_hit_matches_march_oracle():
    rng = np.random.default_rng(2)
    grid = (rng.random((16, 16, 8)) < 0.05).astype(np.int32)
    vs = 0.05
    for _ in range(200):
        o = rng.uniform(0.05, 0.75, 3) * np.array([1, 1, 0.5])
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        i, j, k, t = first_hit(grid, o, d, vs, 0.0, 2.0, 0.0)
        cell, t_ref = march_grid_first(grid, o, d, vs, 0.0, 2.0)
        if cell is None:
            assert i == -1
        else:
            assert (i, j, k) == cell
            assert t == pytest.approx(t_ref, abs=2e-4)


def test_camera_rays_are_unit_and_centered():
    origin, dirs, ratio = camera_rays(Pose(1.0, 2.0, 90.0), CAM)
    np.testing.assert_allclose(origin, [1.0, 2.0, 0.88])
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)
    center = dirs[64 * CAM.width_px + 64]
    np.testing.assert_allclose(center, [0.0, 1.0, 0.0], atol=1e-12)
    assert ratio.min() == pytest.approx(1.0)
