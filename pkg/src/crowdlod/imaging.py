"""Raster primitives shared by the impostor baker and the metrics.

Images are plain ``numpy`` arrays of shape ``(height, width, 4)`` and dtype
``uint8`` holding straight (non-premultiplied) RGBA. Coordinates use a
top-left origin with y increasing downward.
"""
from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)


class Rect(NamedTuple):
    """Half-open pixel rectangle: ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def contains(self, other: "Rect") -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and self.x1 >= other.x1 and self.y1 >= other.y1)


def new_image(width: int, height: int, fill=(0, 0, 0, 0)) -> np.ndarray:
    if width < 1 or height < 1:
        raise ValueError(f"image dimensions must be >= 1, got {width}x{height}")
    img = np.empty((height, width, 4), dtype=np.uint8)
    img[...] = np.asarray(fill, dtype=np.uint8)
    return img


def check_rgba(img: np.ndarray) -> np.ndarray:
    """Validate that ``img`` is an RGBA uint8 raster and return it."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise TypeError(f"expected uint8 pixels, got {img.dtype}")
    if img.ndim != 3 or img.shape[2] != 4:
        raise ValueError(f"expected an (H, W, 4) array, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    return img


def alpha_bbox(img: np.ndarray, threshold: int = 0) -> Optional[Rect]:
    """Tightest rectangle holding every pixel with alpha > ``threshold``.

    Returns None when no pixel qualifies.
    """
    img = check_rgba(img)
    mask = img[..., 3] > threshold
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return Rect(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def union_rects(rects: Iterable[Optional[Rect]]) -> Optional[Rect]:
    """Coordinate-wise min/max envelope of ``rects``; None entries are skipped."""
    out = None
    for r in rects:
        if r is None:
            continue
        if out is None:
            out = Rect(*r)
        else:
            out = Rect(min(out.x0, r.x0), min(out.y0, r.y0),
                       max(out.x1, r.x1), max(out.y1, r.y1))
    return out


def crop(img: np.ndarray, rect: Rect) -> np.ndarray:
    img = check_rgba(img)
    h, w = img.shape[:2]
    if not (0 <= rect.x0 < rect.x1 <= w and 0 <= rect.y0 < rect.y1 <= h):
        raise ValueError(f"{rect} is outside a {w}x{h} image")
    return img[rect.y0:rect.y1, rect.x0:rect.x1].copy()


def _area_taps(n_in: int, n_out: int):
    # Output cell i covers [i*n_in, (i+1)*n_in) in units of 1/n_out input
    # pixels, so every overlap is an integer and the weights sum to n_in.
    lo = np.arange(n_out, dtype=np.int64) * n_in
    hi = lo + n_in
    first = lo // n_out
    last = (hi - 1) // n_out
    taps = int((last - first).max()) + 1
    j = first[:, None] + np.arange(taps)[None, :]
    overlap = (np.minimum((j + 1) * n_out, hi[:, None])
               - np.maximum(j * n_out, lo[:, None]))
    overlap = np.clip(overlap, 0, None)
    j = np.minimum(j, n_in - 1)
    return j, overlap


def resize_area(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Box-filter resampling to ``out_w`` x ``out_h``.

    Each output sample is the exact area-weighted mean of the input region it
    covers, computed in integer arithmetic and rounded half-up per channel.
    For integer downscale factors that is the plain mean of the input block.
    Works for upscaling too (each output pixel then overlaps one or two
    source pixels per axis).
    """
    img = check_rgba(img)
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be >= 1, got {out_w}x{out_h}")
    in_h, in_w = img.shape[:2]
    if (in_w, in_h) == (out_w, out_h):
        return img.copy()

    src = img.astype(np.int64)
    jx, wx = _area_taps(in_w, out_w)
    tmp = np.zeros((in_h, out_w, 4), dtype=np.int64)
    for k in range(jx.shape[1]):
        tmp += src[:, jx[:, k], :] * wx[:, k][None, :, None]

    jy, wy = _area_taps(in_h, out_h)
    acc = np.zeros((out_h, out_w, 4), dtype=np.int64)
    for k in range(jy.shape[1]):
        acc += tmp[jy[:, k], :, :] * wy[:, k][:, None, None]

    den = in_w * in_h
    out = (2 * acc + den) // (2 * den)
    return out.astype(np.uint8)


def composite_over(img: np.ndarray, bg=(0, 0, 0)) -> np.ndarray:
    """Source-over composite of straight-alpha ``img`` onto a flat colour.

    The result is fully opaque; channels are rounded half-up.
    """
    img = check_rgba(img)
    a = img[..., 3:4].astype(np.int64)
    rgb = img[..., :3].astype(np.int64)
    back = np.asarray(bg, dtype=np.int64).reshape(1, 1, 3)
    num = rgb * a + back * (255 - a)
    out = np.empty_like(img)
    out[..., :3] = ((2 * num + 255) // 510).astype(np.uint8)
    out[..., 3] = 255
    return out


def paste(dst: np.ndarray, src: np.ndarray, x: int, y: int) -> None:
    """Copy ``src`` into ``dst`` at (x, y) in place; no blending."""
    h, w = src.shape[:2]
    dst[y:y + h, x:x + w] = src


def load_image(path) -> np.ndarray:
    """Read a PNG (or anything Pillow opens) as RGBA; missing alpha is 255."""
    with Image.open(path) as im:
        return np.array(im.convert("RGBA"), dtype=np.uint8)


def save_image(img: np.ndarray, path, compress_level: int = 6) -> Path:
    img = check_rgba(img)
    path = Path(path)
    Image.fromarray(img).save(path, format="PNG",
                              compress_level=compress_level)
    return path


def load_frames(directory, pattern: str = "*.png") -> list:
    """Load every matching image in ``directory`` in natural numeric order."""
    paths = sorted(Path(directory).glob(pattern), key=_natural_key)
    if not paths:
        raise FileNotFoundError(f"no images matching {pattern!r} in {directory}")
    log.debug("loading %d frames from %s", len(paths), directory)
    return [load_image(p) for p in paths]


def frame_paths(directory, pattern: str = "*.png") -> Sequence[Path]:
    return sorted(Path(directory).glob(pattern), key=_natural_key)


def _natural_key(path: Path):
    parts = re.split(r"(\d+)", path.name)
    return [int(p) if p.isdigit() else p for p in parts]
