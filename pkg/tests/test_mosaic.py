"""Map maintenance: lifting keyframes, reprojection culling, PLY export."""

import numpy as np
import pytest

from densemap.fileio import read_ply
from densemap.geometry import DepthField, Pose, StereoRig
from densemap.matcher import DisparityField
from densemap.mosaic import (
    GlobalMap,
    KeyframeRecord,
    MapPoint,
    MapPoints,
    cull_mask,
    export_ply,
    lift_keyframe,
    mosaic_update,
)


def _rig(width=64, height=48):
    return StereoRig.from_params(
        fx=80.0, baseline_mm=5.0, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
        width=width, height=height,
    )


def _keyframe(index, rig, pose=None, depth_mm=40.0, valid=True, color_value=128):
    h, w = rig.image_height, rig.image_width
    depth = np.full((h, w), depth_mm, dtype=np.float32)
    mask = np.full((h, w), valid, dtype=bool)
    color = np.full((h, w, 3), color_value, dtype=np.uint8)
    disparity = DisparityField(
        disparity=rig.focal_length_px * rig.baseline_mm / depth,
        confidence=np.ones((h, w), dtype=np.float32),
        valid_mask=mask.copy(),
    )
    return KeyframeRecord(
        index=index,
        pose=pose or Pose.identity(),
        depth=DepthField(depth=depth, valid_mask=mask),
        color=color,
        disparity=disparity,
    )


class TestMapPoints:
    def test_from_points_round_trip(self):
        pts = [
            MapPoint(position=(1.0, 2.0, 3.0), color=(10, 20, 30), source_keyframe=0),
            MapPoint(position=(-4.0, 0.5, 9.0), color=(1, 2, 3), source_keyframe=7),
        ]
        coll = MapPoints.from_points(pts)
        assert len(coll) == 2
        assert list(coll) == pts
        assert coll[1].source_keyframe == 7

    def test_empty(self):
        coll = MapPoints.empty()
        assert len(coll) == 0
        assert coll.positions.shape == (0, 3)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="lengths differ"):
            MapPoints(
                np.zeros((3, 3), dtype=np.float32),
                np.zeros((2, 3), dtype=np.uint8),
                np.zeros(3, dtype=np.int32),
            )

    def test_non_finite_position_rejected(self):
        positions = np.array([[0.0, np.nan, 1.0]], dtype=np.float32)
        with pytest.raises(ValueError, match="finite"):
            MapPoints(positions, np.zeros((1, 3), np.uint8), np.zeros(1, np.int32))

    def test_map_point_validates_position(self):
        with pytest.raises(ValueError, match="finite"):
            MapPoint(position=(0.0, float("inf"), 1.0), color=(0, 0, 0),
                     source_keyframe=0)


class TestLiftKeyframe:
    def test_count_matches_stride_grid(self):
        rig = _rig(640, 480)
        kf = _keyframe(0, rig)
        points = lift_keyframe(kf, rig, subsample_stride=2)
        assert len(points) == 320 * 240

    def test_stride_one_lifts_every_pixel(self):
        rig = _rig()
        kf = _keyframe(0, rig)
        assert len(lift_keyframe(kf, rig, subsample_stride=1)) == 64 * 48

    def test_no_valid_pixels_gives_empty(self):
        rig = _rig()
        kf = _keyframe(0, rig, valid=False)
        points = lift_keyframe(kf, rig)
        assert len(points) == 0

    def test_invalid_stride_rejected(self):
        rig = _rig()
        with pytest.raises(ValueError, match="subsample_stride"):
            lift_keyframe(_keyframe(0, rig), rig, subsample_stride=0)

    def test_constant_depth_lands_on_plane(self):
        # identity pose: world z equals camera depth for every lifted point
        rig = _rig()
        kf = _keyframe(0, rig, depth_mm=40.0)
        points = lift_keyframe(kf, rig)
        np.testing.assert_allclose(points.positions[:, 2], 40.0, atol=0.5)

    def test_colors_and_sources_carried_over(self):
        rig = _rig()
        kf = _keyframe(3, rig, color_value=200)
        points = lift_keyframe(kf, rig)
        assert np.all(points.colors == 200)
        assert np.all(points.source_keyframes == 3)

    def test_pose_translation_shifts_points(self):
        rig = _rig()
        pose = Pose(np.eye(3), np.array([100.0, 0.0, 0.0]))
        base = lift_keyframe(_keyframe(0, rig), rig)
        moved = lift_keyframe(_keyframe(0, rig, pose=pose), rig)
        np.testing.assert_allclose(
            moved.positions[:, 0] - base.positions[:, 0], 100.0, atol=1e-3
        )


class TestMosaicUpdate:
    def test_first_keyframe_initializes_map(self):
        rig = _rig()
        kf = _keyframe(0, rig)
        cloud = lift_keyframe(kf, rig)
        updated = mosaic_update(GlobalMap.empty(), kf, cloud, rig)
        assert len(updated) == len(cloud)
        np.testing.assert_array_equal(updated.positions, cloud.positions)
        assert updated.keyframe_log == (0,)
        assert updated.culled_counts == (0,)

    def test_same_content_twice_keeps_size(self):
        # reprocessing the identical view replaces, never accumulates
        rig = _rig()
        kf0 = _keyframe(0, rig)
        kf1 = _keyframe(1, rig)
        cloud = lift_keyframe(kf0, rig)
        m = mosaic_update(GlobalMap.empty(), kf0, cloud, rig)
        m = mosaic_update(m, kf1, lift_keyframe(kf1, rig), rig)
        assert len(m) == len(cloud)
        assert m.culled_counts == (0, len(cloud))
        assert np.all(m.points.source_keyframes == 1)

    def test_disjoint_views_accumulate(self):
        # second camera far to the side: nothing reprojects, sizes add
        rig = _rig()
        kf0 = _keyframe(0, rig)
        far = Pose(np.eye(3), np.array([1.0e6, 0.0, 0.0]))
        kf1 = _keyframe(1, rig, pose=far)
        c0 = lift_keyframe(kf0, rig)
        c1 = lift_keyframe(kf1, rig)
        m = mosaic_update(GlobalMap.empty(), kf0, c0, rig)
        m = mosaic_update(m, kf1, c1, rig)
        assert len(m) == len(c0) + len(c1)
        assert m.culled_counts == (0, 0)

    def test_duplicate_index_rejected(self):
        rig = _rig()
        kf = _keyframe(0, rig)
        m = mosaic_update(GlobalMap.empty(), kf, lift_keyframe(kf, rig), rig)
        with pytest.raises(ValueError, match="already processed"):
            mosaic_update(m, kf, lift_keyframe(kf, rig), rig)

    def test_decreasing_index_rejected(self):
        rig = _rig()
        kf5 = _keyframe(5, rig)
        m = mosaic_update(GlobalMap.empty(), kf5, lift_keyframe(kf5, rig), rig)
        kf2 = _keyframe(2, rig)
        with pytest.raises(ValueError, match="must increase"):
            mosaic_update(m, kf2, lift_keyframe(kf2, rig), rig)

    def test_behind_camera_points_survive(self):
        # new camera sits past the old surface; old points are behind it
        rig = _rig()
        kf0 = _keyframe(0, rig, depth_mm=40.0)
        c0 = lift_keyframe(kf0, rig)
        m = mosaic_update(GlobalMap.empty(), kf0, c0, rig)
        ahead = Pose(np.eye(3), np.array([0.0, 0.0, 100.0]))
        kf1 = _keyframe(1, rig, pose=ahead, depth_mm=40.0)
        c1 = lift_keyframe(kf1, rig)
        m = mosaic_update(m, kf1, c1, rig)
        assert len(m) == len(c0) + len(c1)
        assert m.culled_counts[-1] == 0

    def test_size_arithmetic(self):
        rig = _rig()
        kf0 = _keyframe(0, rig)
        m0 = mosaic_update(GlobalMap.empty(), kf0, lift_keyframe(kf0, rig), rig)
        kf1 = _keyframe(1, rig)
        c1 = lift_keyframe(kf1, rig, subsample_stride=4)
        m1 = mosaic_update(m0, kf1, c1, rig)
        culled = m1.culled_counts[-1]
        assert culled >= 0
        assert len(m1) == len(m0) - culled + len(c1)

    def test_inputs_never_mutated(self):
        rig = _rig()
        kf0 = _keyframe(0, rig)
        c0 = lift_keyframe(kf0, rig)
        before_positions = c0.positions.copy()
        before_colors = c0.colors.copy()
        m0 = mosaic_update(GlobalMap.empty(), kf0, c0, rig)
        kf1 = _keyframe(1, rig)
        c1 = lift_keyframe(kf1, rig)
        m1 = mosaic_update(m0, kf1, c1, rig)
        np.testing.assert_array_equal(c0.positions, before_positions)
        np.testing.assert_array_equal(c0.colors, before_colors)
        # earlier snapshot is untouched by the later update
        assert len(m0) == len(before_positions)
        assert m0.keyframe_log == (0,)
        assert np.all(m0.points.source_keyframes == 0)
        assert len(m1) != 0

    def test_accepts_map_point_iterable(self):
        rig = _rig()
        kf = _keyframe(0, rig)
        pts = [MapPoint((0.0, 0.0, 40.0), (9, 9, 9), 0)]
        m = mosaic_update(GlobalMap.empty(), kf, pts, rig)
        assert len(m) == 1
        assert m.points[0] == pts[0]


class TestCullMask:
    def test_empty_map_yields_empty_mask(self):
        rig = _rig()
        mask = cull_mask(MapPoints.empty(), _keyframe(0, rig), rig)
        assert mask.shape == (0,)

    def test_invalid_depth_pixel_does_not_cull(self):
        rig = _rig()
        kf0 = _keyframe(0, rig)
        cloud = lift_keyframe(kf0, rig)
        kf1 = _keyframe(1, rig, valid=False)
        assert not cull_mask(cloud, kf1, rig).any()

    def test_depth_gate_spares_disagreeing_points(self):
        # same view, but the new depth differs by 10 mm: gated keeps, plain culls
        rig = _rig()
        kf0 = _keyframe(0, rig, depth_mm=40.0)
        cloud = lift_keyframe(kf0, rig)
        kf1 = _keyframe(1, rig, depth_mm=50.0)
        plain = cull_mask(cloud, kf1, rig, depth_gated=False)
        gated = cull_mask(cloud, kf1, rig, depth_gated=True)
        assert plain.all()
        assert not gated.any()

    def test_depth_gate_passes_agreeing_points(self):
        rig = _rig()
        kf0 = _keyframe(0, rig, depth_mm=40.0)
        cloud = lift_keyframe(kf0, rig)
        kf1 = _keyframe(1, rig, depth_mm=41.0)
        gated = cull_mask(cloud, kf1, rig, depth_gated=True, depth_gate_mm=2.0)
        assert gated.all()


class TestExport:
    def test_empty_map_exports_readable_ply(self, tmp_path):
        path = tmp_path / "empty.ply"
        export_ply(GlobalMap.empty(), path)
        positions, colors = read_ply(path)
        assert positions.shape == (0, 3)
        assert b"element vertex 0" in path.read_bytes()

    def test_three_points_bit_exact(self, tmp_path):
        pts = MapPoints(
            np.array([[0.5, -1.25, 3.0], [7.0, 8.0, 9.5], [-2.0, 0.0, 41.0]],
                     dtype=np.float32),
            np.array([[255, 0, 0], [0, 255, 0], [0, 0, 255]], dtype=np.uint8),
            np.array([0, 0, 1], dtype=np.int32),
        )
        gmap = GlobalMap(points=pts, keyframe_log=(0, 1), culled_counts=(0, 0))
        path = tmp_path / "three.ply"
        export_ply(gmap, path)
        positions, colors = read_ply(path)
        np.testing.assert_array_equal(positions, pts.positions)
        np.testing.assert_array_equal(colors, pts.colors)
