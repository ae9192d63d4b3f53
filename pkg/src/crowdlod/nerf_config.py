"""Instant-NGP LoD presets and their network configuration files.

Training is not done here; the emitted JSON uses the trainer's own key names
(``encoding``, ``network``, ``dir_encoding``, ``rgb_network``) so it can be
passed to it directly.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path


@dataclass(frozen=True)
class NerfPreset:
    lod: int
    hash_levels: int
    features_per_level: int
    log2_hashmap_size: int
    base_resolution: int
    density_neurons: int
    density_layers: int
    sh_degree: int
    rgb_neurons: int
    rgb_layers: int


PRESETS = (
    NerfPreset(0, 12, 2, 18, 16, 128, 1, 4, 64, 2),
    NerfPreset(1, 12, 2, 17, 16, 64, 1, 3, 32, 2),
    NerfPreset(2, 12, 2, 16, 16, 32, 1, 2, 16, 2),
    NerfPreset(3, 12, 2, 15, 16, 16, 1, 1, 16, 1),
)


def preset(lod: int) -> NerfPreset:
    if not 0 <= lod < len(PRESETS):
        raise ValueError(f"NeRF LoD must be 0..{len(PRESETS) - 1}, got {lod}")
    return PRESETS[lod]


def hash_capacity(p: NerfPreset) -> int:
    """Feature slots across all hash levels: ``L * 2**log2_hashmap_size * F``.

    An upper bound; coarse levels that fit densely use fewer slots.
    """
    return p.hash_levels * (1 << p.log2_hashmap_size) * p.features_per_level


def emit_config(p: NerfPreset) -> dict:
    return {
        "lod": p.lod,
        "encoding": {
            "otype": "HashGrid",
            "n_levels": p.hash_levels,
            "n_features_per_level": p.features_per_level,
            "log2_hashmap_size": p.log2_hashmap_size,
            "base_resolution": p.base_resolution,
        },
        "network": {
            "otype": "FullyFusedMLP",
            "activation": "ReLU",
            "output_activation": "None",
            "n_neurons": p.density_neurons,
            "n_hidden_layers": p.density_layers,
        },
        "dir_encoding": {
            "otype": "Composite",
            "nested": [
                {"n_dims_to_encode": 3, "otype": "SphericalHarmonics", "degree": p.sh_degree},
                {"otype": "Identity"},
            ],
        },
        "rgb_network": {
            "otype": "FullyFusedMLP",
            "activation": "ReLU",
            "output_activation": "None",
            "n_neurons": p.rgb_neurons,
            "n_hidden_layers": p.rgb_layers,
        },
    }


def dumps(p: NerfPreset) -> str:
    return json.dumps(emit_config(p), indent=2) + "\n"


def parse_config(doc) -> NerfPreset:
    """Inverse of :func:`emit_config`; accepts a dict or JSON text."""
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    enc, net, rgb = doc["encoding"], doc["network"], doc["rgb_network"]
    sh = next(n for n in doc["dir_encoding"]["nested"] if n["otype"] == "SphericalHarmonics")
    return NerfPreset(
        lod=int(doc["lod"]),
        hash_levels=enc["n_levels"],
        features_per_level=enc["n_features_per_level"],
        log2_hashmap_size=enc["log2_hashmap_size"],
        base_resolution=enc["base_resolution"],
        density_neurons=net["n_neurons"],
        density_layers=net["n_hidden_layers"],
        sh_degree=sh["degree"],
        rgb_neurons=rgb["n_neurons"],
        rgb_layers=rgb["n_hidden_layers"],
    )


def write_config(p: NerfPreset, path) -> Path:
    path = Path(path)
    path.write_text(dumps(p))
    return path


def as_dict(p: NerfPreset) -> dict:
    return asdict(p)
