import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from depthtrack.errors import BothEmpty, DimensionMismatch, GridMismatch, NonPositiveVoxelSize
from depthtrack.geometry import (
    MAX_GRID_DIM,
    AABB,
    PointCloud,
    VoxelStats,
    backproject,
    box_iou,
    box_iou_matrix,
    cloud_iou,
    grid_shape,
    joint_bounds,
    mean_masked_depth,
    pairwise_voxel_iou,
    voxel_iou_3d,
    voxelize,
)
from depthtrack.ingest import CameraIntrinsics, ProjectionCenter, encode_mask_rle

from oracles import dense_voxel_iou

coords = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=st.floats(0, 10))


def test_matches_dense_oracle_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = rng.uniform(0, 10, (rng.integers(1, 300), 3))
        b = rng.uniform(0, 10, (rng.integers(1, 300), 3))
        assert cloud_iou(PointCloud(a), PointCloud(b), 0.4) == dense_voxel_iou(a, b, 0.4)


@settings(max_examples=150, deadline=None)
@given(coords, coords, st.sampled_from([0.25, 0.4, 1.0, 3.0]))
def test_matches_dense_oracle_property(a, b, size):
    assert cloud_iou(PointCloud(a), PointCloud(b), size) == dense_voxel_iou(a, b, size)


def test_voxelize_pair_grid_and_iou():
    a = PointCloud([[0, 0, 0], [0.5, 0.5, 0.5], [1.0, 1.0, 1.0]])
    b = PointCloud([[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])
    bounds = joint_bounds(a, b)
    ga, gb = voxelize(a, bounds, 1.0), voxelize(b, bounds, 1.0)
    assert ga.dims == (2, 2, 2)
    assert ga.occupied == {(0, 0, 0), (1, 1, 1)}
    assert gb.occupied == {(1, 1, 1)}  # the max corner is clamped into the last cell
    assert voxel_iou_3d(ga, gb) == 0.5
    other = voxelize(b, AABB(np.zeros(3), np.full(3, 4.0)), 1.0)
    with pytest.raises(GridMismatch):
        voxel_iou_3d(ga, other)


def test_empty_and_bad_inputs():
    empty = PointCloud(np.empty((0, 3)))
    full = PointCloud([[1.0, 2.0, 3.0]])
    assert cloud_iou(empty, full, 0.4) == 0.0
    with pytest.raises(BothEmpty):
        joint_bounds(empty, empty)
    with pytest.raises(NonPositiveVoxelSize):
        cloud_iou(full, full, 0.0)
    with pytest.raises(NonPositiveVoxelSize):
        pairwise_voxel_iou([full], [full], -1.0)


def test_single_point_self_iou():
    p = PointCloud([[3.0, 3.0, 3.0]])
    assert cloud_iou(p, p, 0.4) == 1.0


def test_grid_cap_coarsens_by_integer_factor():
    size, dims, capped = grid_shape(AABB(np.zeros(3), np.array([1000.0, 1.0, 1.0])), 0.4)
    assert capped and max(dims) <= MAX_GRID_DIM
    assert size / 0.4 == pytest.approx(round(size / 0.4)) and round(size / 0.4) == 5
    stats = VoxelStats()
    a = PointCloud([[0, 0, 0], [1000, 1, 1]])
    assert cloud_iou(a, a, 0.4, stats) == 1.0 and stats.capped == 1


@settings(max_examples=400, deadline=None)
@given(coords, coords, st.sampled_from([0.2, 0.4, 1.0]))
def test_iou_algebra(a, b, size):
    ca, cb = PointCloud(a), PointCloud(b)
    v = cloud_iou(ca, cb, size)
    assert 0.0 <= v <= 1.0
    assert v == cloud_iou(cb, ca, size)
    assert cloud_iou(ca, ca, size) == 1.0


@settings(max_examples=300, deadline=None)
@given(coords, coords, st.integers(0, 2), st.floats(1.01, 5.0))
def test_separated_clouds_have_zero_iou(a, b, axis, gap_cells):
    size = 0.4
    shift = a[:, axis].max() - b[:, axis].min() + gap_cells * size
    b = b.copy()
    b[:, axis] += shift
    stats = VoxelStats()
    assert cloud_iou(PointCloud(a), PointCloud(b), size, stats) == 0.0
    assert dense_voxel_iou(a, b, size) == 0.0


@settings(max_examples=200, deadline=None)
@given(coords, coords)
def test_pruning_never_changes_the_result(a, b):
    # the pruned path must agree with the oracle even for near-touching boxes
    b = b + np.array([a[:, 0].max() - b[:, 0].min() + 0.4, 0, 0])
    assert cloud_iou(PointCloud(a), PointCloud(b), 0.4) == dense_voxel_iou(a, b, 0.4)


def test_pairwise_matrix_and_threads():
    rng = np.random.default_rng(3)
    dets = [PointCloud(rng.uniform(0, 3, (50, 3)) + k) for k in range(4)]
    trks = [PointCloud(rng.uniform(0, 3, (50, 3)) + k) for k in range(3)]
    s1, s4 = VoxelStats(), VoxelStats()
    m1 = pairwise_voxel_iou(dets, trks, 0.4, s1)
    m4 = pairwise_voxel_iou(dets, trks, 0.4, s4, workers=4)
    assert m1.shape == (4, 3)
    np.testing.assert_array_equal(m1, m4)
    assert s1 == s4 and s1.pairs == 12
    for i, d in enumerate(dets):
        for j, t in enumerate(trks):
            assert m1[i, j] == dense_voxel_iou(d.points, t.points, 0.4)


def test_backproject_planar_scene():
    cam = CameraIntrinsics(1000.0, 1000.0, 64, 48)
    depth = np.full((48, 64), 10.0, dtype=np.float32)
    depth[20, 30] = 0.0  # invalid pixel inside the mask
    mask = np.zeros((48, 64), bool)
    mask[10:30, 20:40] = True
    bbox = (20.0, 10.0, 40.0, 30.0)
    cloud = backproject(depth, mask, bbox, cam)
    assert len(cloud) == 20 * 20 - 1
    cx, cy = 30.0, 20.0
    v, u = np.nonzero(mask & (depth > 0))
    expected = np.stack([(u - cx) * 10 / 1000, (v - cy) * 10 / 1000, np.full(u.size, 10.0)], axis=1)
    np.testing.assert_allclose(cloud.points, expected, rtol=1e-12, atol=0)
    assert cloud.source_box == bbox


def test_backproject_principal_point_and_rle():
    cam = CameraIntrinsics(500.0, 400.0, 8, 6, ProjectionCenter.PRINCIPAL_POINT, 3.5, 2.5)
    depth = np.arange(48, dtype=np.float32).reshape(6, 8)
    mask = np.zeros((6, 8), bool)
    mask[1:3, 4:6] = True
    cloud = backproject(depth, encode_mask_rle(mask), (0, 0, 8, 6), cam)
    z = depth[1:3, 4:6].ravel()
    np.testing.assert_array_equal(cloud.points[:, 2], z)
    np.testing.assert_allclose(cloud.points[:, 0], (np.tile([4, 5], 2) - 3.5) * z / 500.0)
    np.testing.assert_allclose(cloud.points[:, 1], (np.repeat([1, 2], 2) - 2.5) * z / 400.0)
    with pytest.raises(DimensionMismatch):
        backproject(depth, np.ones((5, 8), bool), (0, 0, 8, 6), cam)


def test_mean_masked_depth_fallbacks():
    depth = np.zeros((4, 4), np.float32)
    depth[0, 0] = 2.0
    depth[3, 3] = 6.0
    mask = np.zeros((4, 4), bool)
    mask[0, 0] = mask[1, 1] = True
    assert mean_masked_depth(depth, mask) == 2.0
    mask[:] = False
    mask[2, 2] = True
    assert mean_masked_depth(depth, mask, (2, 2, 4, 4)) == 6.0
    assert mean_masked_depth(depth, mask) == 0.0


def test_box_iou():
    assert box_iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3)
    assert box_iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    m = box_iou_matrix([(0, 0, 10, 10)], [(0, 0, 10, 10), (5, 0, 15, 10)])
    np.testing.assert_allclose(m, [[1.0, 1 / 3]])
    assert box_iou_matrix([], [(0, 0, 1, 1)]).shape == (0, 1)
