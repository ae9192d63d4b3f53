"""Procedural demo assets so the whole pipeline runs without production data."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import imaging, mesh_lod, splat_lod, study_stats

N_FRAMES = 60


def _disc(img, cx, cy, rx, ry, color):
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    inside = ((xx + 0.5 - cx) / rx) ** 2 + ((yy + 0.5 - cy) / ry) ** 2 <= 1.0
    img[inside] = color


def _limb(img, x0, y0, x1, y1, radius, color):
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    px, py = xx + 0.5, yy + 0.5
    dx, dy = x1 - x0, y1 - y0
    t = np.clip(((px - x0) * dx + (py - y0) * dy) / (dx * dx + dy * dy), 0, 1)
    d2 = (px - x0 - t * dx) ** 2 + (py - y0 - t * dy) ** 2
    img[d2 <= radius * radius] = color


def run_cycle_frame(i: int, n: int = N_FRAMES, size: int = 160) -> np.ndarray:
    """One frame of a stick-figure run cycle; the pose loops every ``n`` frames."""
    img = imaging.new_image(size, size)
    phase = 2 * math.pi * i / n
    cx = size * 0.5
    hip_y = size * 0.58 + 2.0 * abs(math.sin(phase))
    skin = (222, 184, 150, 255)
    shirt = (40, 90, 170, 255)
    legs = (50, 50, 60, 255)
    swing = 0.6 * math.sin(phase)
    leg = size * 0.25
    for s in (swing, -swing):
        _limb(img, cx, hip_y, cx + leg * math.sin(s), hip_y + leg * math.cos(s), 4.5, legs)
    arm = size * 0.18
    sh_y = hip_y - size * 0.24
    for s in (-swing, swing):
        _limb(img, cx, sh_y, cx + arm * math.sin(s), sh_y + arm * math.cos(s), 3.5, skin)
    _disc(img, cx, hip_y - size * 0.13, size * 0.07, size * 0.14, shirt)
    _disc(img, cx, sh_y - size * 0.08, size * 0.055, size * 0.055, skin)
    return img


def make_demo(out_dir, n_splats: int = 5000, seed: int = 7) -> Path:
    """Write frames, a mesh, a splat cloud, agents, trials and ``demo.json``."""
    out = Path(out_dir)
    frames = out / "frames"
    frames.mkdir(parents=True, exist_ok=True)
    for i in range(N_FRAMES):
        imaging.save_image(run_cycle_frame(i), frames / f"frame_{i:03d}.png")

    mesh_lod.save_obj(mesh_lod.icosphere(3), out / "mesh.obj")
    splat_lod.save_ply(splat_lod.random_cloud(n_splats, sh_degree=2, seed=seed), out / "splats.ply")

    rng = np.random.default_rng(seed)
    with open(out / "agents.csv", "w") as fh:
        fh.write("id,footprint_ratio\n")
        for k, r in enumerate(np.round(rng.uniform(0.05, 1.1, size=40), 3)):
            fh.write(f"agent{k:02d},{r}\n")
    study_stats.write_trials(study_stats.synthetic_trials(seed=seed), out / "trials.csv")

    config = {
        "frames": "frames",
        "mesh": "mesh.obj",
        "splats": "splats.ply",
        "out": "out",
        "impostor": {"tile_sizes": [256, 128, 64, 32], "cols": 6, "rows": 10,
                     "alpha_threshold": 0},
        "mesh_lod": {"ratios": [1.0, 0.5, 0.25, 0.125]},
        "splat_lod": {"caps": [4000, 1000, 250, 62], "alpha_min": 0.01,
                      "importance": "opacity"},
        "nerf": {"lods": [0, 1, 2, 3]},
    }
    cfg = out / "demo.json"
    cfg.write_text(json.dumps(config, indent=2) + "\n")
    return cfg
