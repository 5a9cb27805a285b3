"""Mesh ingestion, subdivision geometry and topology invariants."""

import numpy as np
import pytest

from dgfv.errors import MeshFormatError, SubdivisionError
from dgfv.mesh import (
    Mesh, SubcellTopology, build_subdivision, interval_mesh,
    laplacian_pseudoinverse, read_mesh, rectangle_mesh, sector_mesh,
    write_mesh,
)

ALL_2D = [("quad-tri", 1), ("quad-tri", 2), ("quad-tri", 3), ("quad-tri", 5),
          ("voronoi-type", 1), ("voronoi-type", 3), ("voronoi-type", 4),
          ("tri-uniform", 1), ("tri-uniform", 3)]


# ---------------------------------------------------------------------------
# readers
# ---------------------------------------------------------------------------


def test_read_two_triangle_square(tmp_path):
    path = tmp_path / "square.msh"
    path.write_text(
        "2 4 2 4\n"
        "0 0\n1 0\n1 1\n0 1\n"
        "1 2 3\n1 3 4\n"
        "1 1 outflow\n1 2 outflow\n2 2 outflow\n2 3 outflow\n")
    mesh = read_mesh(path)
    assert mesh.ncells == 2
    assert len(mesh.nodes) == 4
    assert len(mesh.boundary_faces) == 4
    assert np.all(mesh.cell_sizes() > 0)


def test_read_1d_periodic(tmp_path):
    mesh = interval_mesh(0.0, 1.0, 40, periodic=True)
    path = tmp_path / "m1d.msh"
    write_mesh(mesh, path)
    back = read_mesh(path, dimension=1)
    assert back.ncells == 40
    assert len(back.periodic_pairs) == 1
    np.testing.assert_allclose(back.cell_sizes(), 1.0 / 40)


def test_read_out_of_range_node(tmp_path):
    path = tmp_path / "bad.msh"
    path.write_text(
        "2 4 1 3\n0 0\n1 0\n1 1\n0 1\n"
        "1 2 999\n"
        "1 1 outflow\n1 2 outflow\n1 3 outflow\n")
    with pytest.raises(MeshFormatError, match="node 999"):
        read_mesh(path)


def test_read_reports_line_numbers(tmp_path):
    path = tmp_path / "bad2.msh"
    path.write_text("2 1 0 0\nnot-a-number 0\n")
    with pytest.raises(MeshFormatError, match="line"):
        read_mesh(path)


def test_degenerate_cell_rejected():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.5, 0.0]])
    cells = np.array([[0, 1, 2], [0, 1, 3]])   # second cell is a sliver line
    with pytest.raises(MeshFormatError, match="degenerate"):
        Mesh(2, nodes, cells, [(0, 1, "outflow")] * 1).validate()


def test_periodic_pair_mismatch():
    mesh = interval_mesh(0, 1, 4, periodic=True)
    mesh.boundary_faces = [(0, 0, "periodic:p0"), (3, 1, "periodic:p1")]
    with pytest.raises(MeshFormatError, match="periodic"):
        mesh.validate()


# ---------------------------------------------------------------------------
# subdivisions
# ---------------------------------------------------------------------------


def test_quadtri_k1_is_three_subcell_cycle():
    sub = build_subdivision(2, "quad-tri", 1)
    assert sub.nsub == 3
    expected = np.array([[2.0, -1, -1], [-1, 2, -1], [-1, -1, 2]])
    np.testing.assert_allclose(sub.laplacian, expected)


def test_tri_uniform_counts():
    sub = build_subdivision(2, "tri-uniform", 3)
    assert sub.nsub == 16              # exceeds the 10 cubic modes
    assert np.allclose(sub.areas, sub.areas[0])   # congruent subtriangles


def test_1d_uniform_split():
    sub = build_subdivision(1, "1d-uniform", 2)
    assert sub.nsub == 3
    np.testing.assert_allclose(sub.areas, 1.0 / 3.0)


@pytest.mark.parametrize("scheme,k", ALL_2D)
def test_subdivision_invariants(scheme, k):
    sub = build_subdivision(2, scheme, k)
    nk = (k + 1) * (k + 2) // 2
    assert sub.nsub >= nk
    assert abs(sub.areas.sum() - 0.5) < 1e-12
    # adjacency: one +1 and one -1 per column
    A = sub.adjacency
    assert np.all(A.sum(axis=0) == 0)
    assert np.all(np.abs(A).sum(axis=0) == 2)
    np.testing.assert_allclose(sub.laplacian, A @ A.T, atol=1e-14)
    assert np.abs(sub.laplacian @ np.ones(sub.nsub)).max() < 1e-12
    # closed-loop identity per subcell (interior faces + edge segments)
    nrm, lng = sub.face_ref_normals_lengths()
    acc = np.zeros((sub.nsub, 2))
    perim = np.zeros(sub.nsub)
    for f in range(sub.nfaces):
        acc[sub.face_left[f]] += lng[f] * nrm[f]
        acc[sub.face_right[f]] -= lng[f] * nrm[f]
        perim[sub.face_left[f]] += lng[f]
        perim[sub.face_right[f]] += lng[f]
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    for e, segs in enumerate(sub.edge_segments):
        a, b = corners[e], corners[(e + 1) % 3]
        d = b - a
        ln = np.hypot(*d)
        n_out = np.array([d[1], -d[0]]) / ln
        for owner, t0, t1 in segs:
            acc[owner] += (t1 - t0) * ln * n_out
            perim[owner] += (t1 - t0) * ln
    assert np.max(np.linalg.norm(acc, axis=1) / perim) < 1e-12


@pytest.mark.parametrize("scheme", ["quad-tri", "voronoi-type"])
def test_lattice_schemes_match_mode_count(scheme):
    for k in (1, 2, 3, 4):
        sub = build_subdivision(2, scheme, k)
        assert sub.nsub == (k + 1) * (k + 2) // 2


def test_invalid_scheme_dimension():
    with pytest.raises(SubdivisionError):
        build_subdivision(1, "quad-tri", 2)
    with pytest.raises(SubdivisionError):
        build_subdivision(2, "1d-uniform", 2)


# ---------------------------------------------------------------------------
# Laplacian pseudoinverse
# ---------------------------------------------------------------------------


def test_lap_pinv_three_cycle():
    L = np.array([[2.0, -1, -1], [-1, 2, -1], [-1, -1, 2]])
    Lp = laplacian_pseudoinverse(L)
    np.testing.assert_allclose(Lp.sum(axis=1), 0.0, atol=1e-12)
    proj = np.eye(3) - np.full((3, 3), 1.0 / 3.0)
    np.testing.assert_allclose(Lp @ L, proj, atol=1e-10)
    # dense eigendecomposition oracle
    w, v = np.linalg.eigh(L)
    ref = (v[:, 1:] / w[1:]) @ v[:, 1:].T
    np.testing.assert_allclose(Lp, ref, atol=1e-12)


def test_lap_pinv_two_node_closed_form():
    L = np.array([[1.0, -1.0], [-1.0, 1.0]])
    np.testing.assert_allclose(
        laplacian_pseudoinverse(L), 0.25 * L, atol=1e-14)


def test_lap_pinv_rejects_kernel_violation():
    with pytest.raises(SubdivisionError):
        laplacian_pseudoinverse(np.eye(3))


def test_lap_pinv_rejects_disconnected():
    L = np.array([
        [1.0, -1, 0, 0], [-1, 1, 0, 0],
        [0, 0, 1, -1], [0, 0, -1, 1],
    ])
    with pytest.raises(SubdivisionError, match="disconnected"):
        laplacian_pseudoinverse(L)


def test_lap_pinv_symmetric_and_consistent():
    rng = np.random.default_rng(7)
    sub = build_subdivision(2, "quad-tri", 3)
    Lp = sub.lap_pinv
    assert np.abs(Lp - Lp.T).max() < 1e-12
    for _ in range(5):
        b = rng.standard_normal(sub.nsub)
        b -= b.mean()
        assert np.linalg.norm(sub.laplacian @ (Lp @ b) - b) <= 1e-10 * np.linalg.norm(b)


# ---------------------------------------------------------------------------
# topology
# ---------------------------------------------------------------------------


def test_subcell_areas_tile_cells():
    mesh = rectangle_mesh(0, 2, 0, 1, 4, 3)
    for scheme, k in (("quad-tri", 2), ("tri-uniform", 2)):
        topo = SubcellTopology(mesh, build_subdivision(2, scheme, k))
        np.testing.assert_allclose(
            topo.sub_areas.sum(axis=1), mesh.cell_sizes(), rtol=1e-12)


def test_face_registry_orientation():
    mesh = rectangle_mesh(0, 1, 0, 1, 3, 3, periodic=True)
    topo = SubcellTopology(mesh, build_subdivision(2, "quad-tri", 2))
    # every interior face once, normals unit, each face's normal points
    # from the left to the right subcell centroid
    assert np.all(topo.face_right[topo.interior_mask] >= 0)
    np.testing.assert_allclose(
        np.linalg.norm(topo.face_normal, axis=1), 1.0, atol=1e-12)
    cents = topo.sub_centroids.reshape(-1, 2)
    sel = topo.face_kind == 0
    d = cents[topo.face_right[sel]] - cents[topo.face_left[sel]]
    assert np.all(np.sum(d * topo.face_normal[sel], axis=1) > 0)


def test_lmp_stencil_1d_interior():
    mesh = interval_mesh(0, 1, 10, periodic=True)
    topo = SubcellTopology(mesh, build_subdivision(1, "1d-uniform", 1))
    assert topo.lmp_stencil(7) == {6, 7, 8}


def test_lmp_stencil_lone_triangle():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    cells = np.array([[0, 1, 2]])
    mesh = Mesh(2, nodes, cells,
                [(0, e, "outflow") for e in range(3)]).validate()
    topo = SubcellTopology(mesh, build_subdivision(2, "quad-tri", 1))
    # all three subcells meet at the barycenter: full-cell stencil
    assert topo.lmp_stencil(0) == {0, 1, 2}


def test_lmp_stencil_spans_vertex_fan():
    # vertex shared by several triangles: stencil crosses all of them
    mesh = rectangle_mesh(0, 1, 0, 1, 2, 2)
    topo = SubcellTopology(mesh, build_subdivision(2, "quad-tri", 1))
    center = np.array([0.5, 0.5])
    # brute-force vertex-incidence oracle over subcell corner points
    incident = set()
    for c in range(mesh.ncells):
        for m in range(topo.ref.nsub):
            verts = topo.map_points(topo.ref.vertices[m])[c]
            if np.min(np.linalg.norm(verts - center, axis=1)) < 1e-9:
                incident.add(c * topo.ref.nsub + m)
    assert len({c for s in incident for c in [s // topo.ref.nsub]}) >= 4
    for s in incident:
        assert incident <= topo.lmp_stencil(s)


def test_cross_cell_conformity_sector():
    mesh = sector_mesh(1.0, 4, 4)
    for scheme in ("quad-tri", "voronoi-type", "tri-uniform"):
        topo = SubcellTopology(mesh, build_subdivision(2, scheme, 3))
        assert topo.nfaces > 0
