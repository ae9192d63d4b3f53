import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import solid
from crowdlod import imaging, metrics

DATA = Path(__file__).parent / "data"


def brute_ssim(a, b, win=11, sigma=1.5, k1=0.01, k2=0.03, L=255.0):
    def luma(img):
        c = imaging.composite_over(img).astype(float)
        return 0.299 * c[..., 0] + 0.587 * c[..., 1] + 0.114 * c[..., 2]
    x, y = luma(a), luma(b)
    r = np.arange(win) - (win - 1) / 2
    g1 = np.exp(-r ** 2 / (2 * sigma ** 2))
    w = np.outer(g1, g1)
    w /= w.sum()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    vals = []
    for i in range(x.shape[0] - win + 1):
        for j in range(x.shape[1] - win + 1):
            px, py = x[i:i + win, j:j + win], y[i:i + win, j:j + win]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * (px - mx) ** 2).sum()
            vy = (w * (py - my) ** 2).sum()
            cxy = (w * (px - mx) * (py - my)).sum()
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


class TestPSNR:
    def test_identical_is_sentinel(self, rng):
        img = rng.integers(0, 256, (5, 5, 4), dtype=np.uint8)
        assert metrics.psnr(img, img) == metrics.IDENTICAL
        assert math.isinf(metrics.IDENTICAL)

    def test_uniform_offset_16(self):
        a = solid(4, 4, (100, 50, 20, 255))
        b = solid(4, 4, (116, 66, 36, 255))
        assert metrics.mse(a, b) == 256
        assert metrics.psnr(a, b) == pytest.approx(10 * math.log10(255 ** 2 / 256), abs=1e-12)
        assert metrics.psnr(a, b) == pytest.approx(24.0484, abs=1e-4)

    def test_single_channel(self):
        a = solid(1, 1, (0, 0, 0, 255))
        b = solid(1, 1, (255, 0, 0, 255))
        assert metrics.psnr(a, b) == pytest.approx(4.7712, abs=1e-4)

    def test_alpha_composited_over_black(self):
        a = solid(2, 2, (200, 0, 0, 0))
        b = solid(2, 2, (0, 0, 0, 255))
        assert metrics.psnr(a, b) == metrics.IDENTICAL

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            metrics.psnr(solid(2, 2, (0, 0, 0, 0)), solid(3, 2, (0, 0, 0, 0)))

    def test_decreasing_in_mse(self):
        a = solid(3, 3, (50, 50, 50, 255))
        vals = [metrics.psnr(a, solid(3, 3, (50 + d, 50, 50, 255))) for d in (1, 2, 5, 40)]
        assert vals == sorted(vals, reverse=True)


class TestSSIM:
    def test_self_similarity(self, rng):
        img = rng.integers(0, 256, (32, 40, 4), dtype=np.uint8)
        assert metrics.ssim(img, img) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("c", [0, 1, 128, 255])
    def test_identical_constants(self, c):
        img = solid(16, 16, (c, c, c, 255))
        assert metrics.ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_black_vs_white_closed_form(self):
        c1 = (0.01 * 255) ** 2
        expected = c1 / (255 ** 2 + c1)
        got = metrics.ssim(solid(16, 16, (0, 0, 0, 255)), solid(16, 16, (255, 255, 255, 255)))
        assert got == pytest.approx(expected, abs=1e-8)
        assert expected == pytest.approx(9.9990e-5, rel=1e-4)

    def test_matches_windowed_oracle(self, rng):
        a = rng.integers(0, 256, (15, 17, 4), dtype=np.uint8)
        b = np.clip(a.astype(int) + rng.integers(-40, 40, a.shape), 0, 255).astype(np.uint8)
        assert metrics.ssim(a, b) == pytest.approx(brute_ssim(a, b), abs=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_symmetric_and_bounded(self, seed):
        r = np.random.default_rng(seed)
        a = r.integers(0, 256, (12, 14, 4), dtype=np.uint8)
        b = r.integers(0, 256, (12, 14, 4), dtype=np.uint8)
        s = metrics.ssim(a, b)
        assert abs(s - metrics.ssim(b, a)) <= 1e-12
        assert -1.0 <= s <= 1.0

    def test_too_small(self):
        with pytest.raises(ValueError):
            metrics.ssim(solid(10, 20, (0, 0, 0, 255)), solid(10, 20, (0, 0, 0, 255)))


class TestSequences:
    def test_identical_sequence(self, rng):
        frames = [rng.integers(0, 256, (12, 12, 4), dtype=np.uint8) for _ in range(60)]
        rep = metrics.compare_sequences(frames, [f.copy() for f in frames])
        assert all(f.ssim == pytest.approx(1.0, abs=1e-12) for f in rep.per_frame)
        assert rep.identical_frames == list(range(60))
        assert math.isinf(rep.psnr_db)

    def test_mean_excludes_identical_frames(self):
        ref = solid(12, 12, (100, 100, 100, 255))
        off = lambda d: solid(12, 12, (100 + d, 100 + d, 100 + d, 255))
        rep = metrics.compare_sequences([ref, off(16), off(16)], [ref, ref, ref])
        assert rep.identical_frames == [0]
        assert rep.psnr_db == pytest.approx(10 * math.log10(255 ** 2 / 256))

    def test_psnr_mean(self):
        frames = [metrics.FrameMetrics(0, 20.0, 0.9), metrics.FrameMetrics(1, 30.0, 0.8)]
        rep = metrics.MetricReport.from_frames(frames)
        assert rep.psnr_db == 25.0 and rep.ssim == pytest.approx(0.85)

    def test_lpips_attached(self, rng):
        frames = [rng.integers(0, 256, (12, 12, 4), dtype=np.uint8) for _ in range(3)]
        rep = metrics.compare_sequences(frames, frames, {0: 0.1, 1: 0.2, 2: 0.3})
        assert [f.lpips for f in rep.per_frame] == [0.1, 0.2, 0.3]
        assert rep.lpips == pytest.approx(0.2)

    def test_errors(self, rng):
        f = [solid(12, 12, (0, 0, 0, 255))] * 2
        with pytest.raises(ValueError):
            metrics.compare_sequences(f, f[:1])
        with pytest.raises(ValueError):
            metrics.compare_sequences(f, f, [0.1])

    def test_report_files(self, tmp_path):
        ref = solid(12, 12, (10, 10, 10, 255))
        rep = metrics.compare_sequences([ref, solid(12, 12, (26, 26, 26, 255))], [ref, ref],
                                        [0.0, 0.5])
        csv_path, txt_path = metrics.write_report(rep, tmp_path)
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "frame_index,psnr_db,ssim,lpips"
        assert lines[1].startswith("0,identical,")
        assert "identical frames" in txt_path.read_text()

    def test_lpips_csv(self, tmp_path):
        p = tmp_path / "lp.csv"
        p.write_text("frame_index,lpips\n0,0.25\n1,0.5\n")
        assert metrics.read_lpips_csv(p) == {0: 0.25, 1: 0.5}


class TestReferenceMetricsIngestion:
    def test_nerf_l0_beats_l3_on_every_metric(self):
        rows = {s.label: s for s in metrics.load_summaries(DATA / "reference_metrics.csv")}
        assert len(rows) == 12
        l0, l3 = rows["NeRF L0"], rows["NeRF L3"]
        assert (l0.psnr_db, l0.ssim, l0.lpips) == (36.18, 0.988, 0.019)
        assert (l3.psnr_db, l3.ssim, l3.lpips) == (28.09, 0.954, 0.052)
        assert metrics.dominates(l0, l3) and not metrics.dominates(l3, l0)

    def test_ranking_rule(self):
        rows = metrics.load_summaries(DATA / "reference_metrics.csv")
        assert metrics.rank(rows, "psnr_db")[0].label == "3DGS L0"
        assert metrics.rank(rows, "lpips")[0].label == "Impostor L0"
        assert metrics.rank(rows, "lpips")[-1].label == "3DGS L3"
        assert metrics.rank(rows, "ssim")[0].label == "3DGS L0"
