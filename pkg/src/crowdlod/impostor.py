"""Stabilized impostor sprite atlases and their UV playback.

A run cycle is cropped to one window (the union of every frame's alpha
bounding box), scaled by a single factor per LoD, centred on a square tile
and packed column-major into a ``cols x rows`` atlas. Because the window and
the scale are shared by all frames, the character does not "breathe" or lose
its root motion between frames.

UV convention: ``v`` is measured from the *top* of the atlas image. Engines
that put ``v = 0`` at the bottom must use ``1 - v``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import imaging
from ._util import pmap
from .imaging import Rect

log = logging.getLogger(__name__)

DEFAULT_TILE_SIZES = (1080, 540, 270, 135)
DEFAULT_COLS = 6
DEFAULT_ROWS = 10


class UVRect(NamedTuple):
    u0: float
    v0: float
    u1: float
    v1: float


@dataclass
class SpriteAtlas:
    image: np.ndarray
    cols: int
    rows: int
    tile_size: int
    frame_count: int
    crop_window: Optional[Rect] = None
    global_scale: float = 1.0
    lod_level: int = 0

    def __post_init__(self):
        h, w = self.image.shape[:2]
        if (w, h) != (self.cols * self.tile_size, self.rows * self.tile_size):
            raise ValueError(f"atlas image is {w}x{h}, layout needs "
                             f"{self.cols * self.tile_size}x{self.rows * self.tile_size}")
        if not 0 <= self.frame_count <= self.cols * self.rows:
            raise ValueError(f"frame_count {self.frame_count} does not fit {self.cols}x{self.rows}")

    def cell(self, frame_index: int):
        """(col, row) of a frame in column-major order."""
        if not 0 <= frame_index < self.frame_count:
            raise IndexError(f"frame {frame_index} out of range [0, {self.frame_count})")
        return frame_index // self.rows, frame_index % self.rows

    def metadata(self) -> dict:
        return {
            "lod_level": self.lod_level,
            "layout": "column-major",
            "cols": self.cols,
            "rows": self.rows,
            "tile_size": self.tile_size,
            "frame_count": self.frame_count,
            "crop_window": list(self.crop_window) if self.crop_window else None,
            "global_scale": self.global_scale,
            "v_origin": "top",
        }


def union_crop_window(frames: Sequence[np.ndarray], alpha_threshold: int = 0) -> Rect:
    """Union of the per-frame alpha bounding boxes of a sequence."""
    if not frames:
        raise ValueError("no frames given")
    shape = frames[0].shape
    for i, f in enumerate(frames):
        if f.shape != shape:
            raise ValueError(f"frame {i} has shape {f.shape}, expected {shape}")
    window = imaging.union_rects(imaging.alpha_bbox(f, alpha_threshold) for f in frames)
    if window is None:
        raise ValueError("every frame is fully transparent")
    return window


def fitted_size(window: Rect, tile_size: int, margin: int = 0):
    """Scaled (width, height) of the crop window and the scale factor."""
    inner = tile_size - 2 * margin
    if inner < 1:
        raise ValueError(f"margin {margin} leaves no room in a {tile_size}px tile")
    w, h = window.width, window.height
    m = max(w, h)
    # round half up, integer arithmetic
    sw = max(1, (2 * w * inner + m) // (2 * m))
    sh = max(1, (2 * h * inner + m) // (2 * m))
    return sw, sh, inner / m


def stabilize_frames(frames: Sequence[np.ndarray], tile_size: int, alpha_threshold: int = 0,
                     crop_window: Optional[Rect] = None, margin: int = 0):
    """Crop, scale and centre every frame onto a ``tile_size`` square tile.

    Returns ``(tiles, crop_window, global_scale)``. Pass ``crop_window`` to
    reuse a window computed elsewhere (``bake_lod_chain`` does this so all
    LoDs share one window). Odd leftover margins go to the right/bottom.
    """
    frames = [imaging.check_rgba(f) for f in frames]
    if tile_size < 1:
        raise ValueError("tile_size must be positive")
    if crop_window is None:
        crop_window = union_crop_window(frames, alpha_threshold)
    else:
        union_crop_window(frames, alpha_threshold)  # validates shapes / content
    sw, sh, scale = fitted_size(crop_window, tile_size, margin)
    ox = (tile_size - sw) // 2
    oy = (tile_size - sh) // 2

    def one(frame):
        tile = imaging.new_image(tile_size, tile_size)
        content = imaging.resize_area(imaging.crop(frame, crop_window), sw, sh)
        imaging.paste(tile, content, ox, oy)
        return tile

    return pmap(one, frames), crop_window, scale


def pack_atlas(tiles: Sequence[np.ndarray], cols: int = DEFAULT_COLS, rows: int = DEFAULT_ROWS,
               crop_window: Optional[Rect] = None, global_scale: float = 1.0,
               lod_level: int = 0) -> SpriteAtlas:
    """Place tile ``f`` at column ``f // rows``, row ``f % rows``.

    Unused cells stay transparent black.
    """
    if not tiles:
        raise ValueError("no tiles to pack")
    if len(tiles) > cols * rows:
        raise ValueError(f"{len(tiles)} tiles do not fit a {cols}x{rows} atlas")
    size = tiles[0].shape[0]
    for i, t in enumerate(tiles):
        imaging.check_rgba(t)
        if t.shape[:2] != (size, size):
            raise ValueError(f"tile {i} is {t.shape[1]}x{t.shape[0]}, expected {size}x{size}")
    image = np.zeros((rows * size, cols * size, 4), dtype=np.uint8)
    for f, t in enumerate(tiles):
        c, r = divmod(f, rows)
        image[r * size:(r + 1) * size, c * size:(c + 1) * size] = t
    return SpriteAtlas(image, cols, rows, size, len(tiles), crop_window, global_scale, lod_level)


def tile_uv(atlas: SpriteAtlas, frame_index: int) -> UVRect:
    col, row = atlas.cell(frame_index)
    return UVRect(col / atlas.cols, row / atlas.rows,
                  (col + 1) / atlas.cols, (row + 1) / atlas.rows)


def extract_tile(atlas: SpriteAtlas, frame_index: int) -> np.ndarray:
    col, row = atlas.cell(frame_index)
    s = atlas.tile_size
    return atlas.image[row * s:(row + 1) * s, col * s:(col + 1) * s].copy()


def bake_lod_chain(frames: Sequence[np.ndarray], tile_sizes=DEFAULT_TILE_SIZES,
                   cols: int = DEFAULT_COLS, rows: int = DEFAULT_ROWS,
                   alpha_threshold: int = 0, margin: int = 0) -> list:
    """One atlas per tile size, all cut from the same crop window."""
    tile_sizes = [int(s) for s in tile_sizes]
    if not tile_sizes:
        raise ValueError("tile_sizes is empty")
    if any(b >= a for a, b in zip(tile_sizes, tile_sizes[1:])):
        raise ValueError(f"tile_sizes must be strictly decreasing, got {tile_sizes}")
    frames = list(frames)
    if len(frames) > cols * rows:
        raise ValueError(f"{len(frames)} frames do not fit a {cols}x{rows} atlas")
    window = union_crop_window(frames, alpha_threshold)
    log.info("crop window %s for %d frames", tuple(window), len(frames))
    atlases = []
    for lod, size in enumerate(tile_sizes):
        tiles, _, scale = stabilize_frames(frames, size, alpha_threshold, window, margin)
        atlases.append(pack_atlas(tiles, cols, rows, window, scale, lod))
        log.info("LoD %d: %dpx tiles, scale %.4f", lod, size, scale)
    return atlases


def save_atlas(atlas: SpriteAtlas, out_dir, stem: Optional[str] = None,
               compress_level: int = 6):
    """Write ``<stem>.png`` plus a ``<stem>.json`` sidecar; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or f"impostor_L{atlas.lod_level}"
    png = imaging.save_image(atlas.image, out_dir / f"{stem}.png", compress_level)
    meta = atlas.metadata()
    meta["image"] = png.name
    sidecar = out_dir / f"{stem}.json"
    sidecar.write_text(json.dumps(meta, indent=2) + "\n")
    return png, sidecar


def load_atlas(sidecar) -> SpriteAtlas:
    sidecar = Path(sidecar)
    meta = json.loads(sidecar.read_text())
    image = imaging.load_image(sidecar.parent / meta["image"])
    window = Rect(*meta["crop_window"]) if meta.get("crop_window") else None
    return SpriteAtlas(image, meta["cols"], meta["rows"], meta["tile_size"],
                       meta["frame_count"], window, meta["global_scale"], meta["lod_level"])
