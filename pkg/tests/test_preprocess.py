import numpy as np
import pytest

from tumorseg.errors import BoxOutOfBounds, EmptyForeground, ShapeMismatch
from tumorseg.preprocess import (
    compute_foreground_box,
    crop,
    foreground_mask,
    normalize,
    restore,
)
from tumorseg.volgrid import CropBox, GridShape, LabelMap, MultimodalVolume


def volume_from(data):
    return MultimodalVolume(np.asarray(data, dtype=np.float32))


def block_volume(shape, lo, hi, value=1.0):
    data = np.zeros((4,) + shape, dtype=np.float32)
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    data[(slice(None),) + sl] = value
    return volume_from(data)


class TestForegroundBox:
    def test_block_bounding_box(self):
        vol = block_volume((240, 240, 155), (10, 20, 30), (50, 60, 70))
        box = compute_foreground_box(vol)
        assert box.lo == (10, 20, 30)
        assert box.hi == (50, 60, 70)
        assert box.original_shape == GridShape(240, 240, 155)

    def test_all_zero_raises(self):
        with pytest.raises(EmptyForeground):
            compute_foreground_box(volume_from(np.zeros((4, 5, 5, 5))))

    def test_hull_of_two_corners(self):
        data = np.zeros((4, 10, 10, 10), dtype=np.float32)
        data[0, 0, 0, 0] = 1.0
        data[3, 9, 9, 9] = 1.0
        box = compute_foreground_box(volume_from(data))
        assert box.lo == (0, 0, 0)
        assert box.hi == (10, 10, 10)

    def test_channel_union(self):
        # each channel contributes a different extreme voxel
        data = np.zeros((4, 8, 8, 8), dtype=np.float32)
        data[1, 2, 3, 4] = 1.0
        data[2, 5, 1, 6] = 1.0
        box = compute_foreground_box(volume_from(data))
        assert box.lo == (2, 1, 4)
        assert box.hi == (6, 4, 7)


class TestCrop:
    def test_full_volume_box_is_identity(self):
        vol = block_volume((6, 7, 8), (1, 1, 1), (5, 6, 7))
        box = CropBox((0, 0, 0), (6, 7, 8), vol.shape)
        assert np.array_equal(crop(vol, box).data, vol.data)

    def test_output_shape_matches_extents(self):
        vol = block_volume((200, 200, 140), (0, 0, 0), (200, 200, 140))
        box = CropBox((10, 20, 5), (138, 148, 133), vol.shape)
        assert crop(vol, box).shape.as_tuple() == (128, 128, 128)

    def test_corner_voxel_alignment(self, rng):
        vol = volume_from(rng.random((4, 9, 9, 9)))
        box = CropBox((2, 3, 4), (7, 8, 9), vol.shape)
        cropped = crop(vol, box)
        assert cropped.data[0, 0, 0, 0] == vol.data[0, 2, 3, 4]
        assert np.array_equal(cropped.data, vol.data[:, 2:7, 3:8, 4:9])

    def test_out_of_bounds_box(self):
        vol = block_volume((5, 5, 5), (0, 0, 0), (5, 5, 5))
        box = CropBox((0, 0, 0), (6, 5, 5), GridShape(6, 5, 5))
        with pytest.raises(BoxOutOfBounds):
            crop(vol, box)

    def test_affine_translated_by_offset(self):
        affine = np.diag([2.0, 1.0, 1.0, 1.0])
        vol = MultimodalVolume(np.ones((4, 6, 6, 6), dtype=np.float32), affine)
        box = CropBox((2, 1, 3), (5, 5, 5), vol.shape)
        cropped = crop(vol, box)
        assert np.allclose(cropped.affine[:3, 3], [4.0, 1.0, 3.0])


class TestNormalize:
    def test_simple_foreground_stats(self):
        data = np.zeros((4, 3, 1, 1), dtype=np.float32)
        data[:, :, 0, 0] = [1.0, 2.0, 3.0]
        out, stats = normalize(volume_from(data))
        fg = out.data[0, :, 0, 0]
        assert abs(fg.mean()) < 1e-6
        assert abs(fg.std() - 1.0) < 1e-6
        assert stats[0].foreground_count == 3
        assert stats[0].mean == pytest.approx(2.0)

    def test_constant_channel_zeroed(self):
        data = np.zeros((4, 4, 4, 4), dtype=np.float32)
        data[0] = 7.0  # constant foreground in channel 0
        data[1] = np.random.default_rng(0).random((4, 4, 4)) + 1.0
        out, stats = normalize(volume_from(data))
        assert np.all(out.data[0] == 0.0)
        assert stats[0].std < 1e-8

    def test_random_volume_stats_oracle(self, rng):
        data = rng.normal(120.0, 30.0, size=(4, 12, 11, 10)).astype(np.float32)
        data[:, :3] = 0.0  # carve out exact-zero background
        vol = volume_from(data)
        mask = foreground_mask(vol)
        out, stats = normalize(vol, mask)
        for c in range(4):
            sel = out.data[c][mask].astype(np.float64)
            assert abs(sel.mean()) < 1e-5
            assert abs(sel.std() - 1.0) < 1e-5
            # independent recompute of the reported stats
            raw = vol.data[c][mask].astype(np.float64)
            assert stats[c].mean == pytest.approx(raw.mean(), abs=1e-9)
            assert stats[c].std == pytest.approx(raw.std(), abs=1e-9)

    def test_background_stays_zero(self, rng):
        data = rng.random((4, 6, 6, 6)).astype(np.float32) + 1.0
        data[:, 0] = 0.0
        out, _ = normalize(volume_from(data))
        assert np.all(out.data[:, 0] == 0.0)

    def test_empty_foreground(self):
        with pytest.raises(EmptyForeground):
            normalize(volume_from(np.zeros((4, 3, 3, 3))))

    def test_carried_mask_is_honored(self, rng):
        data = rng.random((4, 6, 6, 6)).astype(np.float32) + 1.0
        vol = volume_from(data)
        custom = np.zeros((6, 6, 6), dtype=bool)
        custom[:2] = True  # deliberately smaller than the nonzero support
        out, stats = normalize(vol, custom)
        raw = vol.data[0][custom].astype(np.float64)
        assert stats[0].mean == pytest.approx(raw.mean(), abs=1e-9)
        assert stats[0].foreground_count == int(custom.sum())
        # voxels outside the carried mask are background even though nonzero
        assert np.all(out.data[:, 3:] == 0.0)

    def test_idempotent_within_tolerance(self, rng):
        data = rng.normal(50.0, 9.0, size=(4, 8, 8, 8)).astype(np.float32)
        data[:, :2] = 0.0
        vol = volume_from(data)
        mask = foreground_mask(vol)
        once, _ = normalize(vol, mask)
        twice, _ = normalize(once, mask)
        assert np.abs(twice.data - once.data).max() < 1e-5


class TestRestore:
    def test_zero_map_restores_to_zero(self):
        box = CropBox((2, 2, 2), (5, 5, 5), GridShape(10, 10, 10))
        restored = restore(LabelMap(np.zeros((3, 3, 3), dtype=np.uint8)), box)
        assert restored.shape.as_tuple() == (10, 10, 10)
        assert restored.data.sum() == 0

    def test_single_voxel_offset(self):
        box = CropBox((10, 20, 30), (12, 22, 32), GridShape(40, 40, 40))
        data = np.zeros((2, 2, 2), dtype=np.uint8)
        data[0, 0, 0] = 3
        restored = restore(LabelMap(data), box)
        assert restored.data[10, 20, 30] == 3
        assert restored.data.sum() == 3

    def test_right_inverse_of_crop(self, rng):
        labels = np.zeros((12, 12, 12), dtype=np.uint8)
        labels[4:8, 4:8, 4:8] = rng.integers(0, 4, size=(4, 4, 4))
        box = CropBox((2, 2, 2), (10, 10, 10), GridShape(12, 12, 12))
        inner = LabelMap(labels[2:10, 2:10, 2:10])
        restored = restore(inner, box)
        assert np.array_equal(restored.data[2:10, 2:10, 2:10], inner.data)
        assert np.array_equal(restored.data, labels)

    def test_shape_mismatch(self):
        box = CropBox((0, 0, 0), (3, 3, 3), GridShape(5, 5, 5))
        with pytest.raises(ShapeMismatch):
            restore(LabelMap(np.zeros((2, 3, 3), dtype=np.uint8)), box)

    def test_crop_restore_affine_round_trip(self):
        affine = AFFINE = np.array(
            [[-1.0, 0, 0, 96.0], [0, -1.0, 0, 96.0], [0, 0, 1.0, -70.0], [0, 0, 0, 1.0]]
        )
        vol = MultimodalVolume(np.ones((4, 8, 8, 8), dtype=np.float32), AFFINE)
        box = CropBox((1, 2, 3), (6, 7, 8), vol.shape)
        cropped = crop(vol, box)
        labels = LabelMap(np.ones(box.extents(), dtype=np.uint8), cropped.affine)
        restored = restore(labels, box)
        assert np.abs(restored.affine - affine).max() < 1e-9
