"""``crowdlod`` command line: one subcommand per pipeline step.

Exit status: 0 on success, 1 when a step fails, 2 for usage errors and
missing inputs. ``CROWDLOD_THREADS`` sets the worker count for per-frame work.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import imaging, impostor, mesh_lod, metrics, nerf_config, policy, splat_lod, study_stats
from ._util import format_size, parse_list, parse_size

log = logging.getLogger("crowdlod")


class UsageError(Exception):
    """Bad invocation or missing input (exit status 2)."""


def _require(path, what="input") -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


# -- asset steps (shared by the subcommands and `pipeline`) -----------------------

def bake_impostors(frames_dir, out_dir, sizes, cols=6, rows=10, alpha_threshold=0):
    frames = imaging.load_frames(frames_dir)
    atlases = impostor.bake_lod_chain(frames, sizes, cols, rows, alpha_threshold)
    written = []
    for atlas in atlases:
        png, meta = impostor.save_atlas(atlas, out_dir)
        written.append((atlas, png, meta))
        print(f"impostor L{atlas.lod_level}: {atlas.image.shape[1]}x{atlas.image.shape[0]} "
              f"({atlas.frame_count} frames) -> {png}")
    return written


def decimate_mesh(in_path, out_dir, ratios):
    base = mesh_lod.load_obj(in_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for lod, (r, m) in enumerate(zip(ratios, mesh_lod.lod_chain(base, ratios))):
        path = mesh_lod.save_obj(m, out_dir / f"mesh_L{lod}.obj")
        written.append((lod, r, m, path))
        print(f"mesh L{lod}: ratio {r:g}, {m.n_faces} faces -> {path}")
    return written


def prune_splats(in_path, out_dir, caps, alpha_min, importance):
    cloud = splat_lod.load_ply(in_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for lod, (cap, c) in enumerate(zip(caps, splat_lod.lod_chain(cloud, caps, alpha_min, importance))):
        path = splat_lod.save_ply(c, out_dir / f"splats_L{lod}.ply")
        written.append((lod, cap, c, path))
        print(f"splats L{lod}: cap {cap}, {len(c)} splats -> {path}")
    return written


# -- subcommands ----------------------------------------------------------------------

def cmd_bake_impostor(args):
    _require(args.frames, "frames directory")
    bake_impostors(args.frames, args.out, parse_list(args.sizes, int), args.cols, args.rows,
                   args.alpha_threshold)


def cmd_decimate(args):
    _require(args.input, "mesh file")
    decimate_mesh(args.input, args.out, parse_list(args.ratios, float))


def cmd_prune_splats(args):
    _require(args.input, "splat file")
    prune_splats(args.input, args.out, parse_list(args.caps, int), args.alpha_min, args.importance)


def cmd_emit_nerf_config(args):
    out = Path(args.out or f"nerf_L{args.lod}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    p = nerf_config.preset(args.lod)
    nerf_config.write_config(p, out)
    print(f"NeRF L{p.lod}: log2_hashmap_size {p.log2_hashmap_size}, "
          f"{nerf_config.hash_capacity(p):,} feature slots -> {out}")


def cmd_metrics(args):
    _require(args.candidate, "candidate directory")
    _require(args.reference, "reference directory")
    lp = metrics.read_lpips_csv(_require(args.lpips, "LPIPS file")) if args.lpips else None
    report = metrics.compare_sequences(imaging.load_frames(args.candidate),
                                       imaging.load_frames(args.reference), lp)
    csv_path, txt_path = metrics.write_report(report, args.out)
    print(txt_path.read_text(), end="")


def cmd_schedule(args):
    agents = policy.read_agents(_require(args.agents, "agents file"))
    table = policy.PolicyTable.load(_require(args.policy, "policy file")) if args.policy \
        else policy.PolicyTable.default()
    catalog = policy.AssetCatalog.load(_require(args.catalog, "catalog file")) if args.catalog \
        else policy.AssetCatalog.default()
    budget = None if args.budget in (None, "unlimited") else parse_size(args.budget)
    assignment, report = policy.schedule_crowd(agents, table, catalog, memory_budget=budget)
    doc = {
        "assignment": [{"id": a.agent_id, "footprint_ratio": a.footprint_ratio,
                        "band": policy.band_of(a.footprint_ratio),
                        "representation": assignment[a.agent_id].representation,
                        "lod": assignment[a.agent_id].lod} for a in agents],
        "memory": report.to_dict(),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2) + "\n")
    print(f"{len(agents)} agents, distinct assets {format_size(report.distinct_total)}"
          + (" (OVER BUDGET)" if report.overflow else "") + f" -> {out}")


def cmd_analyze(args):
    trials = study_stats.read_trials(_require(args.trials, "trials file"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    props = study_stats.selection_proportions(trials)
    props.to_csv(out / "proportions.csv", index=False, float_format="%.6f", lineterminator="\n")
    table = study_stats.anova_type2(props)
    study_stats.write_anova(table, out)
    rows = study_stats.glm_omnibus(trials)
    study_stats.write_omnibus(rows, out)
    print((out / "anova.txt").read_text(), end="")
    print((out / "lr_tests.txt").read_text(), end="")


@dataclass
class PipelineConfig:
    frames: Path
    mesh: Path
    splats: Path
    out: Path
    tile_sizes: List[int] = field(default_factory=lambda: list(impostor.DEFAULT_TILE_SIZES))
    cols: int = impostor.DEFAULT_COLS
    rows: int = impostor.DEFAULT_ROWS
    alpha_threshold: int = 0
    ratios: List[float] = field(default_factory=lambda: list(mesh_lod.DEFAULT_RATIOS))
    caps: List[int] = field(default_factory=lambda: list(splat_lod.DEFAULT_CAPS))
    alpha_min: float = splat_lod.DEFAULT_ALPHA_MIN
    importance: str = "opacity"
    nerf_lods: List[int] = field(default_factory=lambda: [0, 1, 2, 3])

    @classmethod
    def load(cls, path, out_override=None) -> "PipelineConfig":
        path = _require(path, "config file")
        doc = json.loads(path.read_text())
        base = path.parent
        imp = doc.get("impostor", {})
        ml = doc.get("mesh_lod", {})
        sl = doc.get("splat_lod", {})
        cfg = cls(
            frames=base / doc["frames"], mesh=base / doc["mesh"], splats=base / doc["splats"],
            out=Path(out_override) if out_override else base / doc.get("out", "out"),
            tile_sizes=[int(x) for x in imp.get("tile_sizes", impostor.DEFAULT_TILE_SIZES)],
            cols=int(imp.get("cols", impostor.DEFAULT_COLS)),
            rows=int(imp.get("rows", impostor.DEFAULT_ROWS)),
            alpha_threshold=int(imp.get("alpha_threshold", 0)),
            ratios=[float(x) for x in ml.get("ratios", mesh_lod.DEFAULT_RATIOS)],
            caps=[int(x) for x in sl.get("caps", splat_lod.DEFAULT_CAPS)],
            alpha_min=float(sl.get("alpha_min", splat_lod.DEFAULT_ALPHA_MIN)),
            importance=sl.get("importance", "opacity"),
            nerf_lods=[int(x) for x in doc.get("nerf", {}).get("lods", [0, 1, 2, 3])],
        )
        for p, what in ((cfg.frames, "frames directory"), (cfg.mesh, "mesh file"),
                        (cfg.splats, "splat file")):
            _require(p, what)
        for name in ("tile_sizes", "ratios", "caps", "nerf_lods"):
            if not getattr(cfg, name):
                raise UsageError(f"config list {name!r} is empty")
        return cfg


def _file_entry(path: Path, root: Path):
    return {"path": path.relative_to(root).as_posix(), "bytes": path.stat().st_size}


def cmd_pipeline(args):
    cfg = PipelineConfig.load(args.config, args.out)
    root = cfg.out
    root.mkdir(parents=True, exist_ok=True)
    assets = []

    for atlas, png, meta in bake_impostors(cfg.frames, root / "impostor", cfg.tile_sizes,
                                           cfg.cols, cfg.rows, cfg.alpha_threshold):
        assets.append({"representation": "Impostor", "lod": atlas.lod_level,
                       "files": [_file_entry(png, root), _file_entry(meta, root)],
                       "params": {"tile_size": atlas.tile_size, "cols": atlas.cols,
                                  "rows": atlas.rows, "frame_count": atlas.frame_count,
                                  "crop_window": list(atlas.crop_window),
                                  "global_scale": atlas.global_scale}})
    for lod, r, m, path in decimate_mesh(cfg.mesh, root / "mesh", cfg.ratios):
        v, f, b, nm = mesh_lod.mesh_stats(m)
        assets.append({"representation": "Mesh", "lod": lod, "files": [_file_entry(path, root)],
                       "params": {"ratio": r, "vertices": v, "faces": f}})
    for lod, cap, c, path in prune_splats(cfg.splats, root / "splats", cfg.caps, cfg.alpha_min,
                                          cfg.importance):
        assets.append({"representation": "Gaussian", "lod": lod,
                       "files": [_file_entry(path, root)],
                       "params": {"cap": cap, "count": len(c), "alpha_min": cfg.alpha_min,
                                  "importance": cfg.importance,
                                  "estimated_payload_bytes": splat_lod.estimate_size(len(c), c.sh_degree)}})
    (root / "nerf").mkdir(exist_ok=True)
    for lod in cfg.nerf_lods:
        p = nerf_config.preset(lod)
        path = nerf_config.write_config(p, root / "nerf" / f"nerf_L{lod}.json")
        assets.append({"representation": "NeRF", "lod": lod, "files": [_file_entry(path, root)],
                       "params": {"log2_hashmap_size": p.log2_hashmap_size,
                                  "hash_capacity": nerf_config.hash_capacity(p)}})
    for a in assets:
        a["bytes"] = sum(f["bytes"] for f in a["files"])

    manifest = {"assets": assets}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (root / "memory.txt").write_text(memory_table(assets))
    print((root / "memory.txt").read_text(), end="")
    print(f"manifest -> {root / 'manifest.json'}")


def memory_table(assets) -> str:
    """On-disk bytes per representation and LoD, one row per representation."""
    reps = ["NeRF", "Gaussian", "Impostor", "Mesh"]
    lods = sorted({a["lod"] for a in assets})
    sizes = {(a["representation"], a["lod"]): a["bytes"] for a in assets}
    lines = [f"{'Representation':<15}" + "".join(f"{'LoD' + str(l):>12}" for l in lods)]
    for r in reps:
        cells = [format_size(sizes[(r, l)]) if (r, l) in sizes else "-" for l in lods]
        lines.append(f"{r:<15}" + "".join(f"{c:>12}" for c in cells))
    return "\n".join(lines) + "\n"


def cmd_make_demo(args):
    from .demo import make_demo
    cfg = make_demo(args.out)
    print(f"demo assets and config -> {cfg}")


# -- parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdlod", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = p.add_subparsers(dest="command", metavar="command", required=True)

    s = sub.add_parser("bake-impostor", help="bake stabilized sprite atlases")
    s.add_argument("--frames", required=True, help="directory of numbered RGBA frames")
    s.add_argument("--sizes", default="1080,540,270,135", help="tile sizes, largest first")
    s.add_argument("--cols", type=int, default=impostor.DEFAULT_COLS)
    s.add_argument("--rows", type=int, default=impostor.DEFAULT_ROWS)
    s.add_argument("--alpha-threshold", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bake_impostor)

    s = sub.add_parser("decimate", help="edge-collapse mesh LoD chain")
    s.add_argument("--in", dest="input", required=True, help="Wavefront OBJ file")
    s.add_argument("--ratios", default="1.0,0.5,0.25,0.125")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_decimate)

    s = sub.add_parser("prune-splats", help="Gaussian splat LoD chain")
    s.add_argument("--in", dest="input", required=True, help="binary PLY splat file")
    s.add_argument("--caps", default="120000,30000,7500,1900")
    s.add_argument("--alpha-min", type=float, default=splat_lod.DEFAULT_ALPHA_MIN)
    s.add_argument("--importance", choices=splat_lod.IMPORTANCE_MODES, default="opacity")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prune_splats)

    s = sub.add_parser("emit-nerf-config", help="write an Instant-NGP LoD network config")
    s.add_argument("--lod", type=int, choices=range(4), required=True)
    s.add_argument("--out", help="output file (default nerf_L<lod>.json)")
    s.set_defaults(func=cmd_emit_nerf_config)

    s = sub.add_parser("metrics", help="PSNR/SSIM of candidate frames against a reference")
    s.add_argument("--candidate", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--lpips", help="CSV of frame_index,lpips computed elsewhere")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("schedule", help="assign representation/LoD per agent")
    s.add_argument("--agents", required=True, help="CSV of id,footprint_ratio")
    s.add_argument("--policy", help="policy table JSON (default: bundled)")
    s.add_argument("--catalog", help="asset catalog JSON (default: bundled)")
    s.add_argument("--budget", help="distinct-asset memory budget, e.g. 64MB (default unlimited)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_schedule)

    s = sub.add_parser("analyze", help="proportions, Type II ANOVA and GLM LR tests")
    s.add_argument("--trials", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("pipeline", help="run every asset generator from one config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="override the config's output directory")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("make-demo", help="write the procedural demo asset set")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_demo)
    return p


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"crowdlod: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, KeyError, OSError, np.linalg.LinAlgError) as exc:
        print(f"crowdlod {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
