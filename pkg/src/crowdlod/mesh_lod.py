"""Mesh LoD chains by greedy quadric-error edge collapse.

Each level is decimated independently from the base mesh to
``ceil(ratio * faces)`` triangles. Collapses are ordered by the quadric error
of the best of three placements (either endpoint or the midpoint), ties broken
by the lower ``(min vertex, max vertex)`` edge key. A collapse is rejected
when it would

* break the link condition (the result would be non-manifold),
* duplicate an existing face,
* flip or flatten an adjacent face,
* move a boundary vertex or collapse an edge whose two ends are on the
  boundary (boundaries are kept exactly).

Geometry only: UVs, materials and skinning data are not carried.
"""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_RATIOS = (1.0, 0.5, 0.25, 0.125)
MIN_FACES = 4


class MeshError(ValueError):
    pass


@dataclass
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.triangles)

    def validate(self) -> "TriMesh":
        t = self.triangles
        if t.size and (t.min() < 0 or t.max() >= len(self.vertices)):
            raise MeshError("triangle index out of range")
        bad = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
        if bad.any():
            raise MeshError(f"{int(bad.sum())} degenerate triangles (repeated index)")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinates")
        return self

    def copy(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.triangles.copy(),
                       None if self.normals is None else self.normals.copy())


def _edge_counts(triangles: np.ndarray):
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0, return_counts=True)


def mesh_stats(mesh: TriMesh):
    """``(vertices, faces, boundary edges, non-manifold edges)``."""
    if mesh.n_faces == 0:
        return mesh.n_vertices, 0, 0, 0
    _, counts = _edge_counts(mesh.triangles)
    return (mesh.n_vertices, mesh.n_faces,
            int(np.sum(counts == 1)), int(np.sum(counts > 2)))


def face_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Unnormalised face normals (length = twice the face area)."""
    v = vertices[triangles]
    return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    fn = face_normals(mesh.vertices, mesh.triangles)
    vn = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(vn, mesh.triangles[:, k], fn)
    norm = np.linalg.norm(vn, axis=1, keepdims=True)
    return np.divide(vn, norm, out=np.zeros_like(vn), where=norm > 0)


def _cross(a, b):
    # np.cross is slow for many tiny calls
    return np.stack([a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1],
                     a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2],
                     a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]], axis=1)


class Decimator:
    """Greedy edge-collapse state for one mesh.

    ``costs`` records the quadric error of every accepted collapse in order.
    """

    def __init__(self, mesh: TriMesh):
        mesh.validate()
        self.pos = mesh.vertices.copy()
        self.faces = mesh.triangles.copy()
        self.face_alive = np.ones(len(self.faces), dtype=bool)
        self.n_alive = len(self.faces)
        self.vert_alive = np.ones(len(self.pos), dtype=bool)
        self.version = np.zeros(len(self.pos), dtype=np.int64)
        self.vf = [set() for _ in range(len(self.pos))]
        for f, tri in enumerate(self.faces):
            for v in tri:
                self.vf[v].add(f)
        self.costs = []

        edges, counts = _edge_counts(self.faces)
        self.boundary_edges = {(int(a), int(b)) for (a, b), c in zip(edges, counts) if c == 1}
        self.boundary = np.zeros(len(self.pos), dtype=bool)
        for a, b in self.boundary_edges:
            self.boundary[a] = self.boundary[b] = True

        self.Q = np.zeros((len(self.pos), 4, 4))
        fn = face_normals(self.pos, self.faces)
        area2 = np.linalg.norm(fn, axis=1)
        ok = area2 > 0
        n = np.zeros_like(fn)
        n[ok] = fn[ok] / area2[ok, None]
        d = -np.einsum("ij,ij->i", n, self.pos[self.faces[:, 0]])
        planes = np.concatenate([n, d[:, None]], axis=1)
        # area-weighted plane quadrics
        K = 0.5 * area2[:, None, None] * planes[:, :, None] * planes[:, None, :]
        for k in range(3):
            np.add.at(self.Q, self.faces[:, k], K)

        self.heap = []
        for a, b in edges:
            self._push(int(a), int(b))

    # -- helpers ---------------------------------------------------------------

    def _neighbors(self, v):
        out = set()
        for f in self.vf[v]:
            out.update(int(x) for x in self.faces[f])
        out.discard(v)
        return out

    def _plan(self, a, b):
        """Best (cost, keep, remove, position) for collapsing edge a-b, or None."""
        if (min(a, b), max(a, b)) in self.boundary_edges:
            return None
        ba, bb = self.boundary[a], self.boundary[b]
        if ba and bb:
            return None
        Q = self.Q[a] + self.Q[b]
        if ba or bb:
            keep, drop = (a, b) if ba else (b, a)
            p = self.pos[keep].copy()
            h = np.append(p, 1.0)
            return max(0.0, float(h @ Q @ h)), keep, drop, p
        keep, drop = min(a, b), max(a, b)
        # candidates: endpoint a, endpoint b, midpoint (first wins ties)
        P = np.empty((3, 4))
        P[0, :3] = self.pos[a]
        P[1, :3] = self.pos[b]
        P[2, :3] = 0.5 * (self.pos[a] + self.pos[b])
        P[:, 3] = 1.0
        costs = np.einsum("ij,jk,ik->i", P, Q, P)
        i = int(np.argmin(costs))
        return max(0.0, float(costs[i])), keep, drop, P[i, :3].copy()

    def _push(self, a, b):
        plan = self._plan(a, b)
        if plan is None:
            return
        lo, hi = min(a, b), max(a, b)
        heapq.heappush(self.heap, (plan[0], lo, hi, int(self.version[lo]), int(self.version[hi])))

    def _valid(self, keep, drop, p):
        shared = self.vf[keep] & self.vf[drop]
        if not shared:
            return False
        opposite = set()
        for f in shared:
            opposite.update(int(x) for x in self.faces[f])
        opposite -= {keep, drop}
        # link condition
        if self._neighbors(keep) & self._neighbors(drop) != opposite:
            return False

        existing = {frozenset(int(x) for x in self.faces[f]) for f in self.vf[keep] - shared}
        for f in self.vf[drop] - shared:
            new_tri = frozenset(keep if int(x) == drop else int(x) for x in self.faces[f])
            if new_tri in existing:
                return False

        # reject collapses that flip or flatten a surviving face
        ring = np.fromiter((self.vf[keep] | self.vf[drop]) - shared, dtype=np.int64)
        if ring.size == 0:
            return True
        tris = self.faces[ring]
        old = self.pos[tris]
        new = old.copy()
        new[(tris == keep) | (tris == drop)] = p
        n_old = _cross(old[:, 1] - old[:, 0], old[:, 2] - old[:, 0])
        n_new = _cross(new[:, 1] - new[:, 0], new[:, 2] - new[:, 0])
        dots = np.einsum("ij,ij->i", n_old, n_new)
        nondegenerate = np.einsum("ij,ij->i", n_old, n_old) > 0
        return not np.any(nondegenerate & (dots <= 0))

    def _collapse(self, keep, drop, p):
        for f in list(self.vf[drop]):
            tri = self.faces[f]
            if keep in tri:
                self.face_alive[f] = False
                self.n_alive -= 1
                for v in tri:
                    self.vf[int(v)].discard(f)
            else:
                tri[tri == drop] = keep
                self.vf[keep].add(f)
        self.vf[drop].clear()
        self.vert_alive[drop] = False
        self.pos[keep] = p
        self.Q[keep] += self.Q[drop]
        self.version[keep] += 1
        for n in sorted(self._neighbors(keep)):
            self._push(keep, n)

    # -- driver ----------------------------------------------------------------

    def run(self, target_faces: int) -> "Decimator":
        while self.n_alive > target_faces and self.heap:
            cost, lo, hi, vlo, vhi = heapq.heappop(self.heap)
            if not (self.vert_alive[lo] and self.vert_alive[hi]):
                continue
            if self.version[lo] != vlo or self.version[hi] != vhi:
                continue
            plan = self._plan(lo, hi)
            if plan is None:
                continue
            _, keep, drop, p = plan
            if not self._valid(keep, drop, p):
                continue
            self._collapse(keep, drop, p)
            self.costs.append(cost)
        if self.n_alive > target_faces:
            log.warning("decimation stalled at %d faces (target %d): no valid collapses left",
                        self.n_alive, target_faces)
        return self

    def result(self) -> TriMesh:
        tris = self.faces[self.face_alive]
        used = np.zeros(len(self.pos), dtype=bool)
        used[tris.ravel()] = True
        remap = np.full(len(self.pos), -1, dtype=np.int64)
        remap[used] = np.arange(int(used.sum()))
        return TriMesh(self.pos[used].copy(), remap[tris])


def target_faces(n_faces: int, ratio: float) -> int:
    return math.ceil(ratio * n_faces - 1e-9)


def decimate(mesh: TriMesh, ratio: float) -> TriMesh:
    """Reduce ``mesh`` to about ``ceil(ratio * faces)`` triangles.

    ``ratio == 1`` returns an unchanged copy. Interior collapses remove two
    faces at a time, so the result lands in ``[target - 2, target]``.
    """
    if not 0 < ratio <= 1:
        raise MeshError(f"ratio must be in (0, 1], got {ratio}")
    mesh.validate()
    if ratio == 1:
        return mesh.copy()
    target = target_faces(mesh.n_faces, ratio)
    if target < MIN_FACES:
        raise MeshError(f"target of {target} faces is below the minimum of {MIN_FACES}")
    return Decimator(mesh).run(target).result()


def lod_chain(mesh: TriMesh, ratios: Sequence[float] = DEFAULT_RATIOS) -> list:
    """Decimate the base mesh once per ratio (levels are not cascaded)."""
    ratios = list(ratios)
    if not ratios:
        raise MeshError("ratios is empty")
    for r in ratios:
        if not 0 < r <= 1:
            raise MeshError(f"ratio must be in (0, 1], got {r}")
    return [decimate(mesh, r) for r in ratios]


# -- Wavefront OBJ ------------------------------------------------------------

def load_obj(path) -> TriMesh:
    """Read positions and faces; polygons are fan-triangulated, UVs ignored.

    Normals are kept only when there is exactly one per vertex.
    """
    verts, normals, tris = [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    tris.append([idx[0], idx[k], idx[k + 1]])
    vn = np.array(normals) if normals and len(normals) == len(verts) else None
    return TriMesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3), vn)


def save_obj(mesh: TriMesh, path) -> Path:
    """Write positions, recomputed vertex normals and ``f v//vn`` faces."""
    path = Path(path)
    vn = vertex_normals(mesh)
    lines = [f"# {mesh.n_vertices} vertices, {mesh.n_faces} faces"]
    lines += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"vn {x:.6g} {y:.6g} {z:.6g}" for x, y, z in vn]
    lines += [f"f {a}//{a} {b}//{b} {c}//{c}" for a, b, c in mesh.triangles + 1]
    path.write_text("\n".join(lines) + "\n")
    return path


# -- procedural test shapes -------------------------------------------------

def cube() -> TriMesh:
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return TriMesh(v, tris)


def icosphere(subdivisions: int = 1, radius: float = 1.0) -> TriMesh:
    """Icosahedron subdivided ``subdivisions`` times (20 * 4**n faces)."""
    t = (1 + 5 ** 0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return TriMesh(np.array(verts) * radius, f)


def torus(n_major: int = 50, n_minor: int = 50, major: float = 1.0, minor: float = 0.35,
          wobble: float = 0.0) -> TriMesh:
    """Closed torus with ``2 * n_major * n_minor`` faces.

    ``wobble`` adds a smooth radial ripple so the surface has features.
    """
    u = np.arange(n_major) * 2 * np.pi / n_major
    w = np.arange(n_minor) * 2 * np.pi / n_minor
    U, W = np.meshgrid(u, w, indexing="ij")
    r = minor * (1 + wobble * np.sin(3 * U) * np.cos(2 * W))
    x = (major + r * np.cos(W)) * np.cos(U)
    y = (major + r * np.cos(W)) * np.sin(U)
    z = r * np.sin(W)
    verts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    tris = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            tris += [(a, b, c), (a, c, d)]
    return TriMesh(verts, tris)


def grid(nx: int = 10, ny: int = 10, size: float = 1.0) -> TriMesh:
    """Flat ``nx`` x ``ny`` cell grid in the z = 0 plane (``2 * nx * ny`` faces)."""
    xs, ys = np.meshgrid(np.linspace(0, size, nx + 1), np.linspace(0, size, ny + 1), indexing="ij")
    verts = np.stack([xs, ys, np.zeros_like(xs)], axis=-1).reshape(-1, 3)
    tris = []
    for i in range(nx):
        for j in range(ny):
            a = i * (ny + 1) + j
            b = (i + 1) * (ny + 1) + j
            tris += [(a, b, b + 1), (a, b + 1, a + 1)]
    return TriMesh(verts, tris)
