from fractions import Fraction

import numpy as np
import pytest

from conftest import random_sprite_sequence, solid
from crowdlod import imaging, impostor
from crowdlod.imaging import Rect


def brute_union(frames):
    xs0, ys0, xs1, ys1 = [], [], [], []
    for f in frames:
        ys, xs = np.nonzero(f[..., 3] > 0)
        if len(xs):
            xs0.append(xs.min()); ys0.append(ys.min()); xs1.append(xs.max() + 1); ys1.append(ys.max() + 1)
    return Rect(min(xs0), min(ys0), max(xs1), max(ys1))


def blob_frame(w, h, cx, cy, rx, ry, color=(200, 40, 40, 255)):
    img = np.zeros((h, w, 4), dtype=np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]
    img[((xx + 0.5 - cx) / rx) ** 2 + ((yy + 0.5 - cy) / ry) ** 2 <= 1] = color
    return img


def center(img):
    r = imaging.alpha_bbox(img)
    return ((r.x0 + r.x1) / 2, (r.y0 + r.y1) / 2)


class TestStabilize:
    def test_noop_when_content_fills_tile(self, rng):
        frame = rng.integers(0, 256, (40, 40, 4), dtype=np.uint8)
        frame[..., 3] = rng.integers(1, 256, (40, 40))
        tiles, window, scale = impostor.stabilize_frames([frame], 40)
        assert scale == 1.0 and window == Rect(0, 0, 40, 40)
        assert (tiles[0] == frame).all()

    def test_union_window_and_scale(self):
        a = solid(100, 100, (0, 0, 0, 0)); a[10:20, 10:20] = 255
        b = solid(100, 100, (0, 0, 0, 0)); b[15:30, 5:25] = 255
        tiles, window, scale = impostor.stabilize_frames([a, b], 40)
        assert window == Rect(5, 10, 25, 30)
        assert scale == 2.0
        assert all(t.shape == (40, 40, 4) for t in tiles)

    def test_window_is_union_of_frame_bboxes(self, rng):
        for _ in range(20):
            frames = random_sprite_sequence(rng)
            _, window, _ = impostor.stabilize_frames(frames, 32)
            assert window == brute_union(frames)

    def test_no_clipping_and_transparent_outside(self, rng):
        frames = random_sprite_sequence(rng, n=6, w=50, h=30)
        tiles, window, scale = impostor.stabilize_frames(frames, 24)
        sw, sh, _ = impostor.fitted_size(window, 24)
        ox, oy = (24 - sw) // 2, (24 - sh) // 2
        for t in tiles:
            outside = t.copy()
            outside[oy:oy + sh, ox:ox + sw] = 0
            assert not outside.any()
        # content bbox sits inside the tile with the remainder on the right/bottom
        assert ox <= 24 - sw - ox and oy <= 24 - sh - oy

    def test_pulsating_sprite_keeps_center_and_scale(self):
        frames = [blob_frame(120, 100, 47.0, 55.0, 10 + 8 * abs(np.sin(i / 9)), 20 + 6 * abs(np.cos(i / 7)))
                  for i in range(60)]
        tiles, window, scale = impostor.stabilize_frames(frames, 64)
        centers = np.array([center(t) for t in tiles])
        assert np.ptp(centers[:, 0]) <= 1 and np.ptp(centers[:, 1]) <= 1
        # one partially covered output pixel per side at most
        for f, t in zip(frames, tiles):
            src, dst = imaging.alpha_bbox(f), imaging.alpha_bbox(t)
            assert abs(dst.width - src.width * scale) <= 2
            assert abs(dst.height - src.height * scale) <= 2

    def test_root_motion_is_kept(self):
        frames = [blob_frame(200, 80, 40 + 2 * i, 40, 12, 18) for i in range(30)]
        tiles, window, scale = impostor.stabilize_frames(frames, 128)
        xs = [center(t)[0] for t in tiles]
        steps = np.diff(xs)
        assert np.all(np.abs(steps - 2 * scale) <= 1.0)

    def test_errors(self):
        with pytest.raises(ValueError):
            impostor.stabilize_frames([], 16)
        with pytest.raises(ValueError):
            impostor.stabilize_frames([solid(8, 8, (1, 2, 3, 0))], 16)
        with pytest.raises(ValueError):
            impostor.stabilize_frames([solid(8, 8, (0, 0, 0, 255)), solid(9, 8, (0, 0, 0, 255))], 16)


class TestAtlas:
    def test_default_layout_dimensions(self):
        tiles = [solid(135, 135, (i, 0, 0, 255)) for i in range(60)]
        atlas = impostor.pack_atlas(tiles, 6, 10)
        assert atlas.image.shape == (1350, 810, 4)

    def test_column_major_cells(self):
        tiles = [solid(4, 4, (i, 0, 0, 255)) for i in range(60)]
        atlas = impostor.pack_atlas(tiles, 6, 10)
        assert atlas.cell(0) == (0, 0)
        assert atlas.cell(12) == (1, 2)
        assert atlas.image[2 * 4, 1 * 4, 0] == 12

    def test_tile_uv(self):
        atlas = impostor.pack_atlas([solid(2, 2, (0, 0, 0, 255))] * 60, 6, 10)
        assert impostor.tile_uv(atlas, 0) == pytest.approx((0, 0, 1 / 6, 1 / 10))
        assert impostor.tile_uv(atlas, 12) == pytest.approx((1 / 6, 2 / 10, 2 / 6, 3 / 10))
        assert impostor.tile_uv(atlas, 59) == pytest.approx((5 / 6, 9 / 10, 1, 1))
        with pytest.raises(IndexError):
            impostor.tile_uv(atlas, 60)

    def test_uv_cells_partition_used_region(self):
        atlas = impostor.pack_atlas([solid(2, 2, (0, 0, 0, 255))] * 23, 6, 10)
        cells = set()
        area = Fraction(0)
        for f in range(23):
            u0, v0, u1, v1 = impostor.tile_uv(atlas, f)
            assert 0 <= u0 < u1 <= 1 and 0 <= v0 < v1 <= 1
            cells.add((round(u0 * 6), round(v0 * 10)))
            area += Fraction(round((u1 - u0) * 6), 6) * Fraction(round((v1 - v0) * 10), 10)
        assert len(cells) == 23
        assert area == Fraction(23, 60)

    def test_round_trip_and_unused_cell(self, rng):
        tiles = [rng.integers(0, 256, (8, 8, 4), dtype=np.uint8) for _ in range(13)]
        atlas = impostor.pack_atlas(tiles, 6, 10)
        for k, t in enumerate(tiles):
            assert (impostor.extract_tile(atlas, k) == t).all()
        with pytest.raises(IndexError):
            impostor.extract_tile(atlas, 13)
        # unused cells are transparent black
        assert not atlas.image[3 * 8:, 1 * 8:2 * 8].any()

    def test_single_frame(self, rng):
        t = rng.integers(0, 256, (5, 5, 4), dtype=np.uint8)
        assert (impostor.extract_tile(impostor.pack_atlas([t], 6, 10), 0) == t).all()

    def test_pack_errors(self):
        with pytest.raises(ValueError):
            impostor.pack_atlas([solid(2, 2, (0, 0, 0, 0))] * 61, 6, 10)
        with pytest.raises(ValueError):
            impostor.pack_atlas([solid(2, 2, (0, 0, 0, 0)), solid(3, 3, (0, 0, 0, 0))], 6, 10)

    def test_file_round_trip(self, tmp_path, rng):
        frames = random_sprite_sequence(rng, n=7)
        atlas = impostor.bake_lod_chain(frames, [32])[0]
        png, meta = impostor.save_atlas(atlas, tmp_path)
        back = impostor.load_atlas(meta)
        assert back.crop_window == atlas.crop_window and back.global_scale == atlas.global_scale
        for k in range(7):
            assert (impostor.extract_tile(back, k) == impostor.extract_tile(atlas, k)).all()


class TestLodChain:
    def test_default_sizes(self, rng):
        frames = random_sprite_sequence(rng, n=3, w=40, h=40)
        atlases = impostor.bake_lod_chain(frames)
        assert [a.tile_size for a in atlases] == [1080, 540, 270, 135]
        assert len({a.crop_window for a in atlases}) == 1
        assert [a.lod_level for a in atlases] == [0, 1, 2, 3]

    def test_lower_lod_is_downscaled_upper(self, rng):
        frames = []
        for i in range(4):
            f = np.zeros((300, 300, 4), dtype=np.uint8)
            f[20:236, 10:280] = rng.integers(0, 256, (216, 270, 4))
            f[20:236, 10:280, 3] = 255
            frames.append(f)
        l0, l1 = impostor.bake_lod_chain(frames, [1080, 540])
        for k in range(4):
            a = imaging.resize_area(impostor.extract_tile(l0, k), 540, 540).astype(int)
            b = impostor.extract_tile(l1, k).astype(int)
            assert np.abs(a - b).max() <= 1

    def test_sizes_must_decrease(self, rng):
        with pytest.raises(ValueError):
            impostor.bake_lod_chain(random_sprite_sequence(rng, n=2), [64, 64])
        with pytest.raises(ValueError):
            impostor.bake_lod_chain(random_sprite_sequence(rng, n=2), [])
