import itertools
import logging
import math

import numpy as np
import pytest

from crowdlod import mesh_lod as ml


def brute_stats(mesh):
    # count edges by walking every triangle, no numpy tricks
    uses = {}
    for tri in mesh.triangles.tolist():
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            uses[key] = uses.get(key, 0) + 1
    return (len(mesh.vertices), len(mesh.triangles),
            sum(1 for c in uses.values() if c == 1), sum(1 for c in uses.values() if c > 2))


def assert_valid(mesh):
    n = len(mesh.vertices)
    for tri in mesh.triangles.tolist():
        assert all(0 <= i < n for i in tri)
        assert len(set(tri)) == 3
    seen = set()
    for tri in mesh.triangles.tolist():
        key = frozenset(tri)
        assert key not in seen, "duplicate face"
        seen.add(key)


def test_mesh_stats_examples():
    assert ml.mesh_stats(ml.cube()) == (8, 12, 0, 0)
    tri = ml.TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    assert ml.mesh_stats(tri) == (3, 1, 3, 0)
    quad = ml.TriMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])
    assert ml.mesh_stats(quad) == (4, 2, 4, 0) == brute_stats(quad)


def test_mesh_stats_non_manifold():
    # three triangles hinged on edge 0-1
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]]
    m = ml.TriMesh(v, [[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    assert ml.mesh_stats(m) == brute_stats(m)
    assert ml.mesh_stats(m)[3] == 1


@pytest.mark.parametrize("make", [ml.cube, lambda: ml.icosphere(2), lambda: ml.torus(12, 8),
                                  lambda: ml.grid(5, 4)])
def test_mesh_stats_matches_brute_force(make):
    m = make()
    assert ml.mesh_stats(m) == brute_stats(m)


def test_generators_closed_where_expected():
    assert ml.mesh_stats(ml.icosphere(1))[1:] == (80, 0, 0)
    assert ml.mesh_stats(ml.torus(50, 50))[1:] == (5000, 0, 0)
    assert ml.mesh_stats(ml.grid(3, 2))[1] == 12


def test_cube_identity():
    c = ml.cube()
    out = ml.decimate(c, 1.0)
    np.testing.assert_array_equal(out.triangles, c.triangles)
    np.testing.assert_array_equal(out.vertices, c.vertices)
    assert out is not c


def test_icosphere_half():
    m = ml.icosphere(1)
    out = ml.decimate(m, 0.5)
    assert 38 <= out.n_faces <= 40
    assert_valid(out)
    assert ml.mesh_stats(out)[2:] == (0, 0)


def test_planar_grid_stays_planar():
    g = ml.grid(10, 10)
    out = ml.decimate(g, 0.25)
    assert out.n_faces <= math.ceil(0.25 * g.n_faces)
    assert np.max(np.abs(out.vertices[:, 2])) == 0.0
    assert_valid(out)


def test_grid_boundary_kept():
    g = ml.grid(8, 8)
    out = ml.decimate(g, 0.25)
    # the outline survives exactly: same boundary vertex positions
    def outline(m):
        e, c = ml._edge_counts(m.triangles)
        verts = np.unique(e[c == 1].ravel())
        return {tuple(p) for p in np.round(m.vertices[verts], 12).tolist()}
    assert outline(out) == outline(g)


def test_torus_chain_targets_and_watertight():
    m = ml.torus(50, 50)
    chain = ml.lod_chain(m, [1.0, 0.5, 0.25, 0.125])
    for ratio, level in zip([1.0, 0.5, 0.25, 0.125], chain):
        target = math.ceil(ratio * m.n_faces)
        assert target - 2 <= level.n_faces <= target
        assert_valid(level)
        _, _, boundary, nonmanifold = ml.mesh_stats(level)
        assert boundary == 0 and nonmanifold == 0
    counts = [c.n_faces for c in chain]
    assert counts == sorted(counts, reverse=True)


def test_chain_single_ratio():
    m = ml.icosphere(1)
    (only,) = ml.lod_chain(m, [1.0])
    np.testing.assert_array_equal(only.triangles, m.triangles)


def test_chain_levels_are_independent():
    m = ml.icosphere(2)
    chain = ml.lod_chain(m, [1.0, 0.5, 0.25])
    direct = ml.decimate(m, 0.25)
    np.testing.assert_array_equal(chain[2].triangles, direct.triangles)
    np.testing.assert_allclose(chain[2].vertices, direct.vertices)


def test_face_count_monotone_in_ratio():
    m = ml.torus(20, 12, wobble=0.1)
    ratios = [1.0, 0.8, 0.6, 0.45, 0.3, 0.2]
    counts = [ml.decimate(m, r).n_faces for r in ratios]
    assert counts == sorted(counts, reverse=True)


def test_collapse_costs_nonnegative():
    d = ml.Decimator(ml.torus(20, 12, wobble=0.1))
    d.run(60)
    assert d.costs and min(d.costs) >= 0
    cumulative = np.cumsum(d.costs)
    assert np.all(np.diff(cumulative) >= 0)


def test_decimated_sphere_normals_point_outward():
    out = ml.decimate(ml.icosphere(3), 0.125)
    fn = ml.face_normals(out.vertices, out.triangles)
    centers = out.vertices[out.triangles].mean(axis=1)
    assert np.all(np.einsum("ij,ij->i", fn, centers) > 0)


def test_deterministic():
    m = ml.torus(16, 10, wobble=0.15)
    a, b = ml.decimate(m, 0.3), ml.decimate(m, 0.3)
    np.testing.assert_array_equal(a.triangles, b.triangles)
    np.testing.assert_array_equal(a.vertices, b.vertices)


def test_decimate_errors():
    with pytest.raises(ValueError):
        ml.decimate(ml.cube(), 0.0)
    with pytest.raises(ValueError):
        ml.decimate(ml.cube(), 1.5)
    with pytest.raises(ValueError):
        ml.decimate(ml.cube(), 0.2)  # ceil(2.4) = 3 faces < 4
    bad = ml.TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])
    with pytest.raises(ml.MeshError):
        ml.decimate(bad, 0.5)
    degenerate = ml.TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 1]])
    with pytest.raises(ml.MeshError):
        degenerate.validate()


def test_stall_warns(caplog):
    # a single flat quad has no interior edge, so nothing can collapse
    quad = ml.TriMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]] * 1,
                      [[0, 1, 2], [0, 2, 3]])
    d = ml.Decimator(quad)
    with caplog.at_level(logging.WARNING, logger="crowdlod.mesh_lod"):
        d.run(1)
    assert d.result().n_faces == 2
    assert "stalled" in caplog.text


def test_obj_round_trip(tmp_path):
    m = ml.decimate(ml.icosphere(2), 0.5)
    path = ml.save_obj(m, tmp_path / "m.obj")
    back = ml.load_obj(path)
    np.testing.assert_array_equal(back.triangles, m.triangles)
    np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-9)
    assert back.normals is not None and back.normals.shape == back.vertices.shape


def test_obj_polygons_and_negative_indices(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text("# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nf -4/1 -3/1 -2/1 -1/1\n")
    m = ml.load_obj(p)
    assert m.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


@pytest.mark.slow
def test_large_chain_targets():
    m = ml.torus(138, 98, wobble=0.2)
    assert m.n_faces == 27_048
    chain = ml.lod_chain(m, [1.0, 0.5, 0.25, 0.125])
    for target, level in zip([27_048, 13_524, 6_762, 3_381], chain):
        assert target - 2 <= level.n_faces <= target
        assert ml.mesh_stats(level)[2:] == (0, 0)


def test_face_normals_match_cross_product():
    m = ml.icosphere(1)
    fn = ml.face_normals(m.vertices, m.triangles)
    for tri, n in itertools.islice(zip(m.triangles, fn), 10):
        a, b, c = m.vertices[tri]
        np.testing.assert_allclose(n, np.cross(b - a, c - a))
