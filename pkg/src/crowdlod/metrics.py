"""Fidelity of candidate frames against a mesh-rendered reference.

PSNR and SSIM are computed here; LPIPS needs a pretrained network and is only
ingested from a per-frame score file.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import imaging
from ._util import pmap

# PSNR of a frame pair with zero error. Kept as a float so it sorts above
# every finite score, but reports list these frames separately.
IDENTICAL = math.inf

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class SSIMParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 255.0

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2


def _opaque(a, b, bg=(0, 0, 0)):
    a = imaging.check_rgba(a)
    b = imaging.check_rgba(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[1::-1]} vs {b.shape[1::-1]}")
    return imaging.composite_over(a, bg), imaging.composite_over(b, bg)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared error over all pixels and the three colour channels."""
    a, b = _opaque(a, b)
    d = a[..., :3].astype(np.int64) - b[..., :3].astype(np.int64)
    return float(np.mean(d * d))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB after compositing both over black.

    Returns ``IDENTICAL`` (infinity) when the frames match exactly.
    """
    err = mse(a, b)
    if err == 0:
        return IDENTICAL
    return 10.0 * math.log10(255.0 ** 2 / err)


def luminance(img: np.ndarray) -> np.ndarray:
    rgb = img[..., :3].astype(np.float64)
    return rgb @ np.asarray(LUMA_WEIGHTS)


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable correlation, "valid" region only
    win = np.lib.stride_tricks.sliding_window_view(x, g.size, axis=1)
    x = win @ g
    win = np.lib.stride_tricks.sliding_window_view(x, g.size, axis=0)
    return win @ g


def ssim_map(a: np.ndarray, b: np.ndarray, params: SSIMParams = SSIMParams()) -> np.ndarray:
    a, b = _opaque(a, b)
    h, w = a.shape[:2]
    if h < params.window or w < params.window:
        raise ValueError(f"image {w}x{h} is smaller than the {params.window}px SSIM window")
    x = luminance(a)
    y = luminance(b)
    g = gaussian_window(params.window, params.sigma)

    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x * mu_x
    syy = _filter_valid(y * y, g) - mu_y * mu_y
    sxy = _filter_valid(x * y, g) - mu_x * mu_y

    c1, c2 = params.c1, params.c2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray, params: SSIMParams = SSIMParams()) -> float:
    """Mean structural similarity on Rec.601 luminance (Gaussian 11x11, sigma 1.5)."""
    return float(np.mean(ssim_map(a, b, params)))


@dataclass
class FrameMetrics:
    frame_index: int
    psnr_db: float
    ssim: float
    lpips: Optional[float] = None

    @property
    def identical(self) -> bool:
        return math.isinf(self.psnr_db)


@dataclass
class MetricReport:
    per_frame: list = field(default_factory=list)
    psnr_db: float = math.nan
    ssim: float = math.nan
    lpips: Optional[float] = None

    @property
    def identical_frames(self) -> list:
        return [f.frame_index for f in self.per_frame if f.identical]

    @classmethod
    def from_frames(cls, frames: Sequence[FrameMetrics]) -> "MetricReport":
        frames = sorted(frames, key=lambda f: f.frame_index)
        idx = [f.frame_index for f in frames]
        if len(set(idx)) != len(idx):
            raise ValueError("duplicate frame indices")
        finite = [f.psnr_db for f in frames if math.isfinite(f.psnr_db)]
        if finite:
            mean_psnr = float(np.mean(finite))
        else:
            mean_psnr = IDENTICAL if frames else math.nan
        mean_ssim = float(np.mean([f.ssim for f in frames])) if frames else math.nan
        lp = [f.lpips for f in frames if f.lpips is not None]
        mean_lpips = float(np.mean(lp)) if lp else None
        return cls(list(frames), mean_psnr, mean_ssim, mean_lpips)

    def summary(self, label: str = "") -> "MetricSummary":
        return MetricSummary(label, self.psnr_db, self.ssim, self.lpips)


def compare_sequences(candidate_frames, reference_frames, external_lpips=None,
                      params: SSIMParams = SSIMParams()) -> MetricReport:
    """Score each candidate frame against the reference frame at the same index.

    ``external_lpips`` is either a sequence aligned with the frames or a
    mapping ``frame_index -> score`` covering every frame.
    """
    cand = list(candidate_frames)
    ref = list(reference_frames)
    if len(cand) != len(ref):
        raise ValueError(f"frame count mismatch: {len(cand)} candidate vs {len(ref)} reference")
    lp = _align_lpips(external_lpips, len(cand))

    def score(i):
        return FrameMetrics(i, psnr(cand[i], ref[i]), ssim(cand[i], ref[i], params),
                            None if lp is None else lp[i])

    return MetricReport.from_frames(pmap(score, range(len(cand))))


def _align_lpips(scores, n):
    if scores is None:
        return None
    if isinstance(scores, Mapping):
        missing = [i for i in range(n) if i not in scores]
        if missing or len(scores) != n:
            raise ValueError(f"LPIPS scores cover {len(scores)} frames, expected {n}")
        return [float(scores[i]) for i in range(n)]
    scores = [float(s) for s in scores]
    if len(scores) != n:
        raise ValueError(f"LPIPS length mismatch: {len(scores)} scores for {n} frames")
    return scores


def read_lpips_csv(path) -> dict:
    """Read ``frame_index,lpips`` rows (header optional)."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                out[int(row[0])] = float(row[1])
            except ValueError:
                continue  # header
    return out


def _fmt_psnr(v):
    return "identical" if math.isinf(v) else f"{v:.4f}"


def write_report(report: MetricReport, out_dir, stem: str = "metrics"):
    """Write ``<stem>.csv`` and an aligned plain-text ``<stem>.txt``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "psnr_db", "ssim", "lpips"])
        for f in report.per_frame:
            w.writerow([f.frame_index, _fmt_psnr(f.psnr_db), f"{f.ssim:.6f}",
                        "" if f.lpips is None else f"{f.lpips:.6f}"])
        w.writerow(["mean", _fmt_psnr(report.psnr_db), f"{report.ssim:.6f}",
                    "" if report.lpips is None else f"{report.lpips:.6f}"])

    lines = [f"{'frame':>7} {'PSNR dB':>10} {'SSIM':>9} {'LPIPS':>8}"]
    for f in report.per_frame:
        lp = "-" if f.lpips is None else f"{f.lpips:.4f}"
        lines.append(f"{f.frame_index:>7} {_fmt_psnr(f.psnr_db):>10} {f.ssim:>9.5f} {lp:>8}")
    lp = "-" if report.lpips is None else f"{report.lpips:.4f}"
    lines.append(f"{'mean':>7} {_fmt_psnr(report.psnr_db):>10} {report.ssim:>9.5f} {lp:>8}")
    if report.identical_frames:
        lines.append(f"identical frames (excluded from PSNR mean): {report.identical_frames}")
    txt_path = out_dir / f"{stem}.txt"
    txt_path.write_text("\n".join(lines) + "\n")
    return csv_path, txt_path


# -- summaries of external tables ---------------------------------------------

@dataclass(frozen=True)
class MetricSummary:
    label: str
    psnr_db: float
    ssim: float
    lpips: Optional[float] = None


# higher is better for PSNR and SSIM, lower for LPIPS
_HIGHER_IS_BETTER = {"psnr_db": True, "ssim": True, "lpips": False}


def rank(summaries, metric: str = "psnr_db") -> list:
    """Order summaries from closest to farthest agreement on ``metric``."""
    if metric not in _HIGHER_IS_BETTER:
        raise ValueError(f"unknown metric {metric!r}")
    sign = -1.0 if _HIGHER_IS_BETTER[metric] else 1.0
    usable = [s for s in summaries if getattr(s, metric) is not None]
    return sorted(usable, key=lambda s: sign * getattr(s, metric))


def closer(a: MetricSummary, b: MetricSummary, metric: str) -> bool:
    """True when ``a`` agrees strictly better with the reference than ``b``."""
    va, vb = getattr(a, metric), getattr(b, metric)
    return va > vb if _HIGHER_IS_BETTER[metric] else va < vb


def dominates(a: MetricSummary, b: MetricSummary) -> bool:
    """``a`` is closer than ``b`` on every metric both carry."""
    metrics = ["psnr_db", "ssim"]
    if a.lpips is not None and b.lpips is not None:
        metrics.append("lpips")
    return all(closer(a, b, m) for m in metrics)


def load_summaries(path) -> list:
    """Read ``representation,lod,psnr_db,ssim,lpips`` rows into summaries.

    Labels are ``"<representation> <lod>"``; a blank representation cell
    repeats the one above (the layout printed comparison tables use).
    """
    out = []
    current = ""
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rep = (row.get("representation") or "").strip() or current
            current = rep
            lp = (row.get("lpips") or "").strip()
            out.append(MetricSummary(f"{rep} {row['lod'].strip()}", float(row["psnr_db"]),
                                     float(row["ssim"]), float(lp) if lp else None))
    return out
