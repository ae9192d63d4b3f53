"""3D Gaussian splat LoD: opacity pruning, count capping and size estimates.

Reductions only select splats; attribute values are never modified. Ranking
ties break by original index, so reduced files are reproducible byte for byte.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_CAPS = (120_000, 30_000, 7_500, 1_900)
DEFAULT_ALPHA_MIN = 0.01
IMPORTANCE_MODES = ("opacity", "opacity*volume")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def sh_width(sh_degree: int) -> int:
    """Number of colour coefficients per splat (three channels)."""
    return 3 * (sh_degree + 1) ** 2


@dataclass
class GaussianCloud:
    positions: np.ndarray       # (N, 3)
    log_scales: np.ndarray      # (N, 3)
    rotations: np.ndarray       # (N, 4) unit quaternions, w first
    opacity_logits: np.ndarray  # (N,)
    sh_coeffs: np.ndarray       # (N, 3*(d+1)^2): DC rgb, then rest channel-major
    sh_degree: int = 0
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float32).reshape(-1, 3)
        n = len(self.positions)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float32).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float32).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float32).reshape(n)
        if not 0 <= self.sh_degree <= 3:
            raise ValueError(f"sh_degree must be 0..3, got {self.sh_degree}")
        sh = np.asarray(self.sh_coeffs, dtype=np.float32)
        self.sh_coeffs = sh.reshape(n, -1) if n else sh.reshape(0, sh_width(self.sh_degree))
        if self.sh_coeffs.shape[1] != sh_width(self.sh_degree):
            raise ValueError(f"{self.sh_coeffs.shape[1]} SH coefficients per splat, "
                             f"degree {self.sh_degree} needs {sh_width(self.sh_degree)}")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float32).reshape(n, 3)

    def __len__(self):
        return len(self.positions)

    @property
    def count(self) -> int:
        return len(self)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def check_rotations(self, tol: float = 1e-4):
        norms = np.linalg.norm(self.rotations.astype(np.float64), axis=1)
        if norms.size and np.max(np.abs(norms - 1)) > tol:
            raise ValueError("rotation quaternions are not unit length")

    def subset(self, index) -> "GaussianCloud":
        """Splats at ``index`` (boolean mask or ascending integer indices)."""
        return GaussianCloud(self.positions[index], self.log_scales[index], self.rotations[index],
                             self.opacity_logits[index], self.sh_coeffs[index], self.sh_degree,
                             None if self.normals is None else self.normals[index])


def prune_opacity(cloud: GaussianCloud, alpha_min: float = DEFAULT_ALPHA_MIN) -> GaussianCloud:
    """Keep splats with ``sigmoid(opacity_logit) >= alpha_min``, in input order."""
    if not 0 <= alpha_min < 1:
        raise ValueError(f"alpha_min must be in [0, 1), got {alpha_min}")
    return cloud.subset(np.flatnonzero(cloud.opacities >= alpha_min))


def importance(cloud: GaussianCloud, mode: str = "opacity") -> np.ndarray:
    alpha = cloud.opacities
    if mode == "opacity":
        return alpha
    if mode == "opacity*volume":
        return alpha * np.exp(cloud.log_scales.astype(np.float64).sum(axis=1))
    raise ValueError(f"unknown importance {mode!r}; choose from {IMPORTANCE_MODES}")


def top_indices(score: np.ndarray, n_max: int) -> np.ndarray:
    """Indices of the ``n_max`` largest scores, ties to the lower index, ascending."""
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    if n_max >= len(score):
        return np.arange(len(score))
    order = np.argsort(-score, kind="stable")
    return np.sort(order[:n_max])


def cap_count(cloud: GaussianCloud, n_max: int, importance_mode: str = "opacity") -> GaussianCloud:
    """Keep the ``n_max`` most important splats, preserving their order."""
    return cloud.subset(top_indices(importance(cloud, importance_mode), n_max))


def lod_chain(cloud: GaussianCloud, caps: Sequence[int] = DEFAULT_CAPS,
              alpha_min: float = DEFAULT_ALPHA_MIN, importance_mode: str = "opacity") -> list:
    """Prune then cap the base cloud once per cap.

    With a fixed importance the levels are nested: every splat of level k+1
    is also in level k.
    """
    caps = [int(c) for c in caps]
    if not caps:
        raise ValueError("caps is empty")
    if any(b > a for a, b in zip(caps, caps[1:])):
        raise ValueError(f"caps must be non-increasing, got {caps}")
    pruned = prune_opacity(cloud, alpha_min)
    log.info("opacity prune (alpha < %g) kept %d of %d splats", alpha_min, len(pruned), len(cloud))
    return [cap_count(pruned, c, importance_mode) for c in caps]


def estimate_size(n: int, sh_degree: int = 2) -> int:
    """Payload bytes of ``n`` float32 splats.

    Counts position, log-scale, rotation, opacity and SH colour. The three
    ``nx, ny, nz`` padding floats some files carry, and the file header, are
    not included.
    """
    floats = 3 + 3 + 4 + 1 + sh_width(sh_degree)
    return n * 4 * floats


def random_cloud(n: int, sh_degree: int = 2, seed: int = 0) -> GaussianCloud:
    """Synthetic cloud with a spread of opacities (roughly 5% below 0.01)."""
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianCloud(
        positions=rng.normal(scale=0.5, size=(n, 3)),
        log_scales=rng.normal(loc=-4.0, scale=0.7, size=(n, 3)),
        rotations=q,
        opacity_logits=rng.normal(loc=0.5, scale=2.5, size=n),
        sh_coeffs=rng.normal(scale=0.3, size=(n, sh_width(sh_degree))),
        sh_degree=sh_degree,
    )


# -- PLY (binary little endian) ---------------------------------------------

_PLY_TYPES = {
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
}


def _property_names(sh_degree: int, with_normals: bool):
    names = ["x", "y", "z"]
    if with_normals:
        names += ["nx", "ny", "nz"]
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(sh_width(sh_degree) - 3)]
    names += ["opacity"]
    names += [f"scale_{i}" for i in range(3)]
    names += [f"rot_{i}" for i in range(4)]
    return names


def save_ply(cloud: GaussianCloud, path, with_normals: bool = True) -> Path:
    """Write the conventional splat layout as binary little-endian PLY.

    Normals are written as zeros when the cloud carries none.
    """
    path = Path(path)
    names = _property_names(cloud.sh_degree, with_normals)
    data = np.empty(len(cloud), dtype=[(n, "<f4") for n in names])
    cols = [cloud.positions]
    if with_normals:
        cols.append(cloud.normals if cloud.normals is not None
                    else np.zeros((len(cloud), 3), np.float32))
    cols += [cloud.sh_coeffs, cloud.opacity_logits[:, None], cloud.log_scales, cloud.rotations]
    flat = np.concatenate(cols, axis=1).astype("<f4")
    for i, n in enumerate(names):
        data[n] = flat[:, i]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(cloud)}"]
    header += [f"property float {n}" for n in names]
    header += ["end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())
    return path


def load_ply(path) -> GaussianCloud:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ValueError(f"{path} is not a PLY file")
        fmt = None
        count = None
        props = []
        in_vertex = False
        while True:
            line = fh.readline()
            if not line:
                raise ValueError("unterminated PLY header")
            tok = line.decode("ascii").split()
            if not tok or tok[0] in ("comment", "obj_info"):
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    count = int(tok[2])
                elif count is not None:
                    raise ValueError("elements after 'vertex' are not supported")
            elif tok[0] == "property" and in_vertex:
                if tok[1] == "list":
                    raise ValueError("list properties are not supported for splats")
                props.append((tok[2], _PLY_TYPES[tok[1]]))
            elif tok[0] == "end_header":
                break
        if fmt != "binary_little_endian":
            raise ValueError(f"unsupported PLY format {fmt!r}")
        data = np.frombuffer(fh.read(), dtype=props, count=count)

    names = {n for n, _ in props}
    rest = sorted((n for n in names if n.startswith("f_rest_")), key=lambda n: int(n[7:]))
    n_coef = 3 + len(rest)
    sh_degree = int(round((n_coef / 3) ** 0.5)) - 1
    if sh_width(sh_degree) != n_coef:
        raise ValueError(f"{n_coef} SH coefficients do not match any degree")

    def stack(keys):
        return np.stack([data[k].astype(np.float32) for k in keys], axis=1)

    normals = stack(["nx", "ny", "nz"]) if {"nx", "ny", "nz"} <= names else None
    return GaussianCloud(
        positions=stack(["x", "y", "z"]),
        log_scales=stack([f"scale_{i}" for i in range(3)]),
        rotations=stack([f"rot_{i}" for i in range(4)]),
        opacity_logits=data["opacity"].astype(np.float32),
        sh_coeffs=stack([f"f_dc_{i}" for i in range(3)] + rest),
        sh_degree=sh_degree,
        normals=normals,
    )
