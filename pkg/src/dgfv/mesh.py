"""Meshes, cell subdivisions and subcell topology.

1D meshes are interval partitions; 2D meshes are conforming triangulations.
Every cell carries the same reference subdivision (one scheme, one degree
mesh-wide), so the adjacency matrix, graph Laplacian pseudoinverse and
projection operators are built once on the reference element and shared.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DgfvError, MeshFormatError, SubdivisionError

# ---------------------------------------------------------------------------
# small polygon helpers (reference-space geometry)
# ---------------------------------------------------------------------------


def polygon_area(pts):
    """Signed area of a 2D polygon (positive for CCW orientation)."""
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def polygon_centroid(pts):
    x, y = pts[:, 0], pts[:, 1]
    cross = x * np.roll(y, -1) - np.roll(x, -1) * y
    a = 0.5 * np.sum(cross)
    cx = np.sum((x + np.roll(x, -1)) * cross) / (6.0 * a)
    cy = np.sum((y + np.roll(y, -1)) * cross) / (6.0 * a)
    return np.array([cx, cy])


def _ccw(pts):
    return pts if polygon_area(pts) > 0 else pts[::-1]


def clip_halfplane(poly, point, normal):
    """Clip a convex CCW polygon against {x : (x - point).normal <= 0}."""
    out = []
    n = len(poly)
    d = (poly - point) @ normal
    for i in range(n):
        j = (i + 1) % n
        if d[i] <= 1e-14:
            out.append(poly[i])
        if (d[i] < -1e-14 and d[j] > 1e-14) or (d[i] > 1e-14 and d[j] < -1e-14):
            t = d[i] / (d[i] - d[j])
            out.append(poly[i] + t * (poly[j] - poly[i]))
    if not out:
        return np.zeros((0, 2))
    out = np.asarray(out)
    # drop consecutive duplicates
    keep = [0]
    for i in range(1, len(out)):
        if np.linalg.norm(out[i] - out[keep[-1]]) > 1e-13:
            keep.append(i)
    if len(keep) > 1 and np.linalg.norm(out[keep[-1]] - out[keep[0]]) < 1e-13:
        keep.pop()
    return out[keep]


def triangulate(poly):
    """Fan triangulation of a convex polygon, list of (3,2) arrays."""
    return [np.array([poly[0], poly[i], poly[i + 1]]) for i in range(1, len(poly) - 1)]


# ---------------------------------------------------------------------------
# reference subdivisions
# ---------------------------------------------------------------------------

REF_TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
SCHEMES_2D = ("quad-tri", "voronoi-type", "tri-uniform")
SCHEMES_1D = ("1d-uniform",)


@dataclass
class ReferenceSubdivision:
    """Subdivision of the reference cell plus its connectivity algebra.

    Faces are oriented: the stored unit normal points from subcell ``m``
    (left) to subcell ``p`` (right).  ``edge_segments[e]`` lists, for local
    cell edge ``e``, the (owner subcell, t0, t1) parameter intervals whose
    union is the whole edge, ordered by increasing parameter.
    """

    dim: int
    scheme: str
    degree: int
    nsub: int
    pieces: list                      # per subcell: list of convex CCW polygons
    areas: np.ndarray                 # (Ns,)
    centroids: np.ndarray             # (Ns, dim)
    vertices: list                    # per subcell: (nv, dim) unique corner points
    face_left: np.ndarray             # (NF,) subcell index m
    face_right: np.ndarray            # (NF,) subcell index p
    face_ends: np.ndarray             # (NF, 2, dim) endpoints (point pairs; dim=1: degenerate)
    edge_segments: list               # per local edge: list of (owner, t0, t1)
    adjacency: np.ndarray = field(default=None)   # (Ns, NF) signed incidence
    laplacian: np.ndarray = field(default=None)
    lap_pinv: np.ndarray = field(default=None)

    @property
    def nfaces(self):
        return len(self.face_left)

    def finalize(self):
        ns, nf = self.nsub, self.nfaces
        A = np.zeros((ns, nf))
        A[self.face_left, np.arange(nf)] = 1.0
        A[self.face_right, np.arange(nf)] = -1.0
        self.adjacency = A
        self.laplacian = A @ A.T
        self.lap_pinv = laplacian_pseudoinverse(self.laplacian)
        return self

    def face_ref_normals_lengths(self):
        """Reference-space face normals (m -> p) and lengths."""
        if self.dim == 1:
            # face at a point; normal +1 when p lies right of m
            n = np.where(
                self.centroids[self.face_right, 0] > self.centroids[self.face_left, 0],
                1.0,
                -1.0,
            )[:, None]
            return n, np.ones(self.nfaces)
        d = self.face_ends[:, 1] - self.face_ends[:, 0]
        lengths = np.linalg.norm(d, axis=1)
        n = np.stack([d[:, 1], -d[:, 0]], axis=1) / lengths[:, None]
        mid = 0.5 * (self.face_ends[:, 0] + self.face_ends[:, 1])
        to_right = self.centroids[self.face_right] - mid
        flip = np.sum(n * to_right, axis=1) < 0
        n[flip] *= -1.0
        return n, lengths


def laplacian_pseudoinverse(L, cutoff=1e-12):
    """Moore-Penrose inverse of a subdivision graph Laplacian.

    The kernel must be exactly the constant vector span (connected graph);
    eigenvalues below ``cutoff * lambda_max`` are treated as zero.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise SubdivisionError("Laplacian must be square")
    if np.max(np.abs(L @ np.ones(L.shape[0]))) > 1e-10 * max(1.0, np.max(np.abs(L))):
        raise SubdivisionError("matrix does not annihilate the constant vector")
    w, v = np.linalg.eigh(L)
    tol = cutoff * max(w[-1], 1.0)
    null = w < tol
    if np.count_nonzero(null) != 1:
        raise SubdivisionError(
            f"subdivision graph is disconnected (kernel dimension {np.count_nonzero(null)})"
        )
    winv = np.where(null, 0.0, 1.0 / np.where(null, 1.0, w))
    return (v * winv) @ v.T


def _nk(dim, k):
    return k + 1 if dim == 1 else (k + 1) * (k + 2) // 2


def _lattice_points(k):
    """Barycentric lattice of degree k on the reference triangle."""
    pts, index = [], {}
    for j in range(k + 1):
        for i in range(k + 1 - j):
            index[(i, j)] = len(pts)
            pts.append([i / k, j / k])
    return np.asarray(pts), index


def _refinement_triangles(n):
    """Uniform degree-n refinement of the reference triangle.

    Returns (list of vertex triples in lattice ij-coords, orientation flag)
    where flag is +1 for upward and -1 for downward triangles.
    """
    tris = []
    for j in range(n):
        for i in range(n - j):
            tris.append((((i, j), (i + 1, j), (i, j + 1)), +1))
            if i + j <= n - 2:
                tris.append((((i + 1, j), (i + 1, j + 1), (i, j + 1)), -1))
    return tris


def _ij_to_xy(ij, n):
    return np.array([ij[0] / n, ij[1] / n])


_EDGE_NODES = ((0, 1), (1, 2), (2, 0))  # local edges of the reference triangle


def _edge_param(pt, edge):
    """Parameter of a point on reference edge `edge` (0 at first node)."""
    a = REF_TRIANGLE[_EDGE_NODES[edge][0]]
    b = REF_TRIANGLE[_EDGE_NODES[edge][1]]
    d = b - a
    return float(np.dot(pt - a, d) / np.dot(d, d))


def _on_edge(pt, edge, tol=1e-12):
    a = REF_TRIANGLE[_EDGE_NODES[edge][0]]
    b = REF_TRIANGLE[_EDGE_NODES[edge][1]]
    d = b - a
    cross = (pt[0] - a[0]) * d[1] - (pt[1] - a[1]) * d[0]
    if abs(cross) > tol:
        return False
    t = _edge_param(pt, edge)
    return -tol <= t <= 1 + tol


def _collect_edge_segments(boundary_segments):
    """Sort per-edge (owner, t0, t1) segment lists and merge same-owner runs."""
    out = []
    for segs in boundary_segments:
        segs = sorted(segs, key=lambda s: 0.5 * (s[1] + s[2]))
        merged = []
        for owner, t0, t1 in segs:
            if merged and merged[-1][0] == owner and abs(merged[-1][2] - t0) < 1e-12:
                merged[-1] = (owner, merged[-1][1], t1)
            else:
                merged.append((owner, t0, t1))
        out.append(merged)
    return out


def _build_median_dual(k):
    """Median-dual subdivision: one subcell per degree-k lattice point.

    Every small triangle of the degree-k refinement is split at edge
    midpoints and barycenter into three quads, each assigned to its corner
    lattice point.  Interior faces are the (midpoint, barycenter) segments.
    """
    pts, index = _lattice_points(k)
    ns = len(pts)
    pieces = [[] for _ in range(ns)]
    faces = []
    boundary = [[] for _ in range(3)]
    for tri_ij, _ in _refinement_triangles(k):
        v = [_ij_to_xy(ij, k) for ij in tri_ij]
        owners = [index[ij] for ij in tri_ij]
        c = (v[0] + v[1] + v[2]) / 3.0
        mids = [(v[i] + v[(i + 1) % 3]) / 2.0 for i in range(3)]
        for i in range(3):
            a, b = i, (i + 1) % 3
            quad = _ccw(np.array([v[a], mids[i], c, mids[(i + 2) % 3]]))
            pieces[owners[a]].append(quad)
            # median segment between owners of corners a and b
            faces.append((owners[a], owners[b], mids[i].copy(), c.copy()))
        # boundary pieces: half-edges (v[a], mids[i]) and (mids[i], v[b])
        for i in range(3):
            a, b = i, (i + 1) % 3
            for e in range(3):
                if _on_edge(v[a], e) and _on_edge(v[b], e):
                    ta, tm = _edge_param(v[a], e), _edge_param(mids[i], e)
                    tb = _edge_param(v[b], e)
                    boundary[e].append((owners[a], min(ta, tm), max(ta, tm)))
                    boundary[e].append((owners[b], min(tm, tb), max(tm, tb)))
    return pieces, faces, _collect_edge_segments(boundary), pts


def _build_voronoi(k):
    """Voronoi diagram of the degree-k lattice clipped to the triangle."""
    pts, _ = _lattice_points(k)
    ns = len(pts)
    polys = []
    for i in range(ns):
        poly = REF_TRIANGLE.copy()
        for j in range(ns):
            if j == i:
                continue
            mid = 0.5 * (pts[i] + pts[j])
            normal = pts[j] - pts[i]
            poly = clip_halfplane(poly, mid, normal)
            if len(poly) < 3:
                raise SubdivisionError(f"empty Voronoi region for seed {i}")
        polys.append(_ccw(poly))
    # match shared polygon edges into faces
    pieces = [[p] for p in polys]
    edge_map = {}
    faces = []
    boundary = [[] for _ in range(3)]
    for m, poly in enumerate(polys):
        nv = len(poly)
        for i in range(nv):
            a, b = poly[i], poly[(i + 1) % nv]
            if np.linalg.norm(b - a) < 1e-10:
                continue
            placed = False
            for e in range(3):
                if _on_edge(a, e) and _on_edge(b, e):
                    t0, t1 = sorted((_edge_param(a, e), _edge_param(b, e)))
                    boundary[e].append((m, t0, t1))
                    placed = True
                    break
            if placed:
                continue
            key = tuple(sorted((tuple(np.round(a, 10)), tuple(np.round(b, 10)))))
            if key in edge_map:
                p, pa, pb = edge_map.pop(key)
                faces.append((p, m, pa, pb))
            else:
                edge_map[key] = (m, a.copy(), b.copy())
    if edge_map:
        raise SubdivisionError("unmatched interior Voronoi edges")
    return pieces, faces, _collect_edge_segments(boundary), pts


def _build_tri_uniform(k):
    """Uniform refinement into (k+1)^2 congruent subtriangles."""
    n = k + 1
    tris = _refinement_triangles(n)
    polys = [
        _ccw(np.array([_ij_to_xy(ij, n) for ij in tri_ij])) for tri_ij, _ in tris
    ]
    pieces = [[p] for p in polys]
    edge_map = {}
    faces = []
    boundary = [[] for _ in range(3)]
    for m, poly in enumerate(polys):
        for i in range(3):
            a, b = poly[i], poly[(i + 1) % 3]
            placed = False
            for e in range(3):
                if _on_edge(a, e) and _on_edge(b, e):
                    t0, t1 = sorted((_edge_param(a, e), _edge_param(b, e)))
                    boundary[e].append((m, t0, t1))
                    placed = True
                    break
            if placed:
                continue
            key = tuple(sorted((tuple(np.round(a, 10)), tuple(np.round(b, 10)))))
            if key in edge_map:
                p, pa, pb = edge_map.pop(key)
                faces.append((p, m, pa, pb))
            else:
                edge_map[key] = (m, a.copy(), b.copy())
    if edge_map:
        raise SubdivisionError("unmatched interior refinement edges")
    return pieces, faces, _collect_edge_segments(boundary), None


def build_subdivision(dim, scheme, degree):
    """Build the reference subdivision for one (dimension, scheme, degree).

    Raises SubdivisionError when the scheme does not fit the dimension or
    yields fewer subcells than polynomial coefficients.
    """
    k = int(degree)
    if k < 1:
        raise SubdivisionError("degree must be >= 1")
    nk = _nk(dim, k)
    if dim == 1:
        if scheme != "1d-uniform":
            raise SubdivisionError(f"scheme {scheme!r} invalid for 1D meshes")
        ns = k + 1
        edges = np.linspace(0.0, 1.0, ns + 1)
        pieces = [[np.array([[edges[i]], [edges[i + 1]]])] for i in range(ns)]
        areas = np.diff(edges)
        centroids = 0.5 * (edges[:-1] + edges[1:])[:, None]
        vertices = [np.array([[edges[i]], [edges[i + 1]]]) for i in range(ns)]
        fl = np.arange(ns - 1)
        fr = np.arange(1, ns)
        fends = np.zeros((ns - 1, 2, 1))
        fends[:, 0, 0] = edges[1:-1]
        fends[:, 1, 0] = edges[1:-1]
        edge_segments = [[(0, 0.0, 1.0)], [(ns - 1, 0.0, 1.0)]]
        sub = ReferenceSubdivision(
            1, scheme, k, ns, pieces, areas, centroids, vertices,
            fl, fr, fends, edge_segments,
        )
        return sub.finalize()

    if scheme not in SCHEMES_2D:
        raise SubdivisionError(f"unknown 2D subdivision scheme {scheme!r}")
    if scheme == "quad-tri":
        pieces, faces, edge_segments, _ = _build_median_dual(k)
    elif scheme == "voronoi-type":
        pieces, faces, edge_segments, _ = _build_voronoi(k)
    else:
        pieces, faces, edge_segments, _ = _build_tri_uniform(k)

    ns = len(pieces)
    if ns < nk:
        raise SubdivisionError(f"N_s={ns} < N_k={nk}: subdivision under-resolved")
    areas = np.zeros(ns)
    centroids = np.zeros((ns, 2))
    vertices = []
    for m, polys in enumerate(pieces):
        verts = []
        for poly in polys:
            a = polygon_area(poly)
            if a <= 1e-14:
                raise SubdivisionError(f"zero-area piece in subcell {m}")
            areas[m] += a
            centroids[m] += a * polygon_centroid(poly)
            verts.append(poly)
        centroids[m] /= areas[m]
        uv = np.unique(np.round(np.vstack(verts), 12), axis=0)
        vertices.append(uv)
    if abs(areas.sum() - 0.5) > 1e-12:
        raise SubdivisionError("subcell areas do not sum to the reference area")

    fl = np.array([f[0] for f in faces], dtype=int)
    fr = np.array([f[1] for f in faces], dtype=int)
    fends = np.array([[f[2], f[3]] for f in faces])
    sub = ReferenceSubdivision(
        2, scheme, k, ns, pieces, areas, centroids, vertices,
        fl, fr, fends, edge_segments,
    )
    return sub.finalize()


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------

BC_TAGS = ("periodic", "inflow", "outflow", "wall")


@dataclass
class Mesh:
    """Interval (1D) or triangle (2D) mesh with tagged boundary faces.

    ``boundary_faces`` rows are (cell, local_face, tag_id); periodic faces
    additionally appear in ``periodic_pairs`` as index pairs into the
    boundary list.  Triangle connectivity is stored counterclockwise.
    """

    dim: int
    nodes: np.ndarray                 # (npts, dim)
    cells: np.ndarray                 # (ncells, dim+1) node indices
    boundary_faces: list              # [(cell, local_face, tag string), ...]
    periodic_pairs: list = field(default_factory=list)

    @property
    def ncells(self):
        return len(self.cells)

    def cell_nodes(self):
        return self.nodes[self.cells]

    def cell_sizes(self):
        x = self.cell_nodes()
        if self.dim == 1:
            return np.abs(x[:, 1, 0] - x[:, 0, 0])
        d1 = x[:, 1] - x[:, 0]
        d2 = x[:, 2] - x[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def content_hash(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(np.round(self.nodes, 12)).tobytes())
        h.update(np.ascontiguousarray(self.cells).tobytes())
        h.update(repr(sorted(self.boundary_faces)).encode())
        return h.hexdigest()[:16]

    def validate(self):
        sizes = self.cell_sizes()
        scale = np.sqrt(np.median(np.abs(sizes))) if self.ncells else 1.0
        bad = np.nonzero(sizes < 1e-14 * scale)[0]
        if bad.size:
            raise MeshFormatError(f"degenerate cell {bad[0]} (size {sizes[bad[0]]:g})")
        if np.any(self.cells < 0) or np.any(self.cells >= len(self.nodes)):
            c = int(np.nonzero((self.cells < 0) | (self.cells >= len(self.nodes)))[0][0])
            raise MeshFormatError(f"cell {c} references a node out of range")
        self._check_face_sharing()
        self._check_periodic()
        return self

    def _face_nodes(self, cell, local):
        conn = self.cells[cell]
        if self.dim == 1:
            return (conn[local],)
        a, b = _EDGE_NODES[local]
        return tuple(sorted((conn[a], conn[b])))

    def _check_face_sharing(self):
        counts = {}
        for c in range(self.ncells):
            for e in range(self.dim + 1 if self.dim == 2 else 2):
                counts[self._face_nodes(c, e)] = counts.get(self._face_nodes(c, e), 0) + 1
        tagged = {self._face_nodes(c, e) for c, e, _ in self.boundary_faces}
        for key, n in counts.items():
            if n > 2:
                raise MeshFormatError(f"face {key} shared by {n} cells")
            if n == 1 and key not in tagged:
                raise MeshFormatError(f"boundary face {key} has no tag")

    def _check_periodic(self):
        per = [i for i, (_, _, t) in enumerate(self.boundary_faces) if t.startswith("periodic")]
        groups = {}
        for i in per:
            tag = self.boundary_faces[i][2]
            groups.setdefault(tag, []).append(i)
        pairs = []
        for tag, idx in sorted(groups.items()):
            if len(idx) != 2:
                raise MeshFormatError(f"periodic tag {tag!r} used by {len(idx)} faces (need 2)")
            la = self._face_length(*self.boundary_faces[idx[0]][:2])
            lb = self._face_length(*self.boundary_faces[idx[1]][:2])
            if abs(la - lb) > 1e-12 * max(la, lb):
                raise MeshFormatError(f"periodic pair {tag!r} has mismatched face lengths")
            pairs.append((idx[0], idx[1]))
        self.periodic_pairs = pairs

    def _face_length(self, cell, local):
        if self.dim == 1:
            return 1.0
        a, b = _EDGE_NODES[local]
        pa = self.nodes[self.cells[cell][a]]
        pb = self.nodes[self.cells[cell][b]]
        return float(np.linalg.norm(pb - pa))


def _orient_ccw(nodes, cells):
    cells = cells.copy()
    for i, conn in enumerate(cells):
        d1 = nodes[conn[1]] - nodes[conn[0]]
        d2 = nodes[conn[2]] - nodes[conn[0]]
        if d1[0] * d2[1] - d1[1] * d2[0] < 0:
            cells[i] = conn[[0, 2, 1]]
    return cells


def read_mesh(path, dimension=None):
    """Read the ASCII mesh format.

    Header ``dim npoints ncells nbfaces``, then coordinates, then 1-based
    connectivity, then boundary records ``cell localface tag``.
    """
    with open(path) as f:
        raw = [ln.split("#")[0].strip() for ln in f]
    lines = [(i + 1, ln) for i, ln in enumerate(raw) if ln]
    if not lines:
        raise MeshFormatError("empty mesh file", line=1)

    def take():
        if not lines:
            raise MeshFormatError("unexpected end of file", line=len(raw))
        return lines.pop(0)

    ln_no, header = take()
    parts = header.split()
    if len(parts) != 4:
        raise MeshFormatError("header must be 'dim npoints ncells nbfaces'", line=ln_no)
    try:
        dim, npts, ncells, nbf = (int(p) for p in parts)
    except ValueError:
        raise MeshFormatError("non-integer header entry", line=ln_no) from None
    if dimension is not None and dim != dimension:
        raise MeshFormatError(f"mesh is {dim}D, expected {dimension}D", line=ln_no)
    if dim not in (1, 2):
        raise MeshFormatError(f"unsupported dimension {dim}", line=ln_no)

    nodes = np.zeros((npts, dim))
    for i in range(npts):
        ln_no, ln = take()
        vals = ln.split()
        if len(vals) != dim:
            raise MeshFormatError(f"expected {dim} coordinates", line=ln_no)
        try:
            nodes[i] = [float(v) for v in vals]
        except ValueError:
            raise MeshFormatError("non-numeric coordinate", line=ln_no) from None

    nv = dim + 1
    cells = np.zeros((ncells, nv), dtype=int)
    for i in range(ncells):
        ln_no, ln = take()
        vals = ln.split()
        if len(vals) != nv:
            raise MeshFormatError(f"cell {i}: expected {nv} node indices", line=ln_no)
        try:
            idx = [int(v) - 1 for v in vals]
        except ValueError:
            raise MeshFormatError(f"cell {i}: non-integer node index",
                                  line=ln_no) from None
        for v in idx:
            if v < 0 or v >= npts:
                raise MeshFormatError(
                    f"cell {i} references node {v + 1} of {npts}", line=ln_no
                )
        cells[i] = idx

    bfaces = []
    for _ in range(nbf):
        ln_no, ln = take()
        vals = ln.split()
        if len(vals) != 3:
            raise MeshFormatError("boundary record must be 'cell localface tag'", line=ln_no)
        c, e = int(vals[0]) - 1, int(vals[1]) - 1
        tag = vals[2]
        base = tag.split(":")[0]
        if base not in BC_TAGS:
            raise MeshFormatError(f"unknown boundary tag {tag!r}", line=ln_no)
        if not (0 <= c < ncells):
            raise MeshFormatError(f"boundary record cell {c + 1} out of range", line=ln_no)
        bfaces.append((c, e, tag))

    if dim == 2:
        cells = _orient_ccw(nodes, cells)
    else:
        swap = nodes[cells[:, 0], 0] > nodes[cells[:, 1], 0]
        cells[swap] = cells[swap][:, ::-1]
    return Mesh(dim, nodes, cells, bfaces).validate()


def write_mesh(mesh, path):
    """Write a mesh in the ASCII format accepted by read_mesh."""
    with open(path, "w") as f:
        f.write(f"{mesh.dim} {len(mesh.nodes)} {mesh.ncells} {len(mesh.boundary_faces)}\n")
        for p in mesh.nodes:
            f.write(" ".join(f"{v:.17g}" for v in p) + "\n")
        for conn in mesh.cells:
            f.write(" ".join(str(v + 1) for v in conn) + "\n")
        for c, e, tag in mesh.boundary_faces:
            f.write(f"{c + 1} {e + 1} {tag}\n")


# ---------------------------------------------------------------------------
# mesh generators
# ---------------------------------------------------------------------------


def interval_mesh(a, b, ncells, periodic=False, bc_left="outflow",
                  bc_right="outflow"):
    nodes = np.linspace(a, b, ncells + 1)[:, None]
    cells = np.stack([np.arange(ncells), np.arange(1, ncells + 1)], axis=1)
    if periodic:
        bf = [(0, 0, "periodic:p0"), (ncells - 1, 1, "periodic:p0")]
    else:
        bf = [(0, 0, bc_left), (ncells - 1, 1, bc_right)]
    return Mesh(1, nodes, cells, bf).validate()


def rectangle_mesh(x0, x1, y0, y1, nx, ny, periodic=False, bc="outflow"):
    """Structured triangulation of a rectangle (two triangles per quad)."""
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    nodes = np.array([[x, y] for y in ys for x in xs])
    nid = lambda i, j: j * (nx + 1) + i
    cells = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            if (i + j) % 2 == 0:
                cells.append([a, b, c])
                cells.append([a, c, d])
            else:
                cells.append([a, b, d])
                cells.append([b, c, d])
    cells = _orient_ccw(nodes, np.asarray(cells, dtype=int))
    mesh = Mesh(2, nodes, cells, [])
    bf = _tag_rectangle_boundary(mesh, x0, x1, y0, y1, periodic, bc)
    mesh.boundary_faces = bf
    return mesh.validate()


def _boundary_edges(mesh):
    counts = {}
    for c in range(mesh.ncells):
        for e in range(3):
            key = mesh._face_nodes(c, e)
            counts.setdefault(key, []).append((c, e))
    return {k: v[0] for k, v in counts.items() if len(v) == 1}


def _tag_rectangle_boundary(mesh, x0, x1, y0, y1, periodic, bc):
    tol = 1e-10 * max(x1 - x0, y1 - y0)
    bf = []
    pid = 0
    pending = {}
    for (c, e) in _boundary_edges(mesh).values():
        a, b = _EDGE_NODES[e]
        pa, pb = mesh.nodes[mesh.cells[c][a]], mesh.nodes[mesh.cells[c][b]]
        mid = 0.5 * (pa + pb)
        if abs(mid[0] - x0) < tol:
            side, key = "left", round(float(mid[1]) / tol)
        elif abs(mid[0] - x1) < tol:
            side, key = "right", round(float(mid[1]) / tol)
        elif abs(mid[1] - y0) < tol:
            side, key = "bottom", round(float(mid[0]) / tol)
        else:
            side, key = "top", round(float(mid[0]) / tol)
        if not periodic:
            bf.append((c, e, bc))
            continue
        partner = {"left": "right", "right": "left", "bottom": "top", "top": "bottom"}[side]
        if (partner, key) in pending:
            tag = pending.pop((partner, key))
        else:
            tag = f"periodic:p{pid}"
            pid += 1
            pending[(side, key)] = tag
        bf.append((c, e, tag))
    if periodic and pending:
        raise MeshFormatError("unmatched periodic faces on rectangle boundary")
    return bf


def sector_mesh(r_outer, nr, ntheta, theta_max=np.pi / 4, r_inner=0.0,
                bc_inner="wall", bc_outer="outflow"):
    """Triangulated polar sector mesh with symmetry walls at both rays.

    With ``r_inner == 0`` the apex collapses to a single node and the first
    ring is a triangle fan.
    """
    rs = np.linspace(r_inner, r_outer, nr + 1)
    ts = np.linspace(0.0, theta_max, ntheta + 1)
    nodes = []
    rows = []
    collapsed = r_inner == 0.0
    if collapsed:
        nodes.append([0.0, 0.0])
        rows.append([0] * (ntheta + 1))
        r_start = 1
    else:
        r_start = 0
    for ir in range(r_start, nr + 1):
        row = []
        for t in ts:
            row.append(len(nodes))
            nodes.append([rs[ir] * np.cos(t), rs[ir] * np.sin(t)])
        rows.append(row)
    nodes = np.asarray(nodes)
    cells = []
    for ir in range(nr):
        lo, hi = rows[ir], rows[ir + 1]
        for jt in range(ntheta):
            if collapsed and ir == 0:
                cells.append([lo[jt], hi[jt], hi[jt + 1]])
            else:
                a, b, c, d = lo[jt], lo[jt + 1], hi[jt + 1], hi[jt]
                if (ir + jt) % 2 == 0:
                    cells.append([a, b, c])
                    cells.append([a, c, d])
                else:
                    cells.append([a, b, d])
                    cells.append([b, c, d])
    cells = _orient_ccw(nodes, np.asarray(cells, dtype=int))
    mesh = Mesh(2, nodes, cells, [])
    tol = 1e-10 * r_outer
    bf = []
    for (c, e) in _boundary_edges(mesh).values():
        a, b = _EDGE_NODES[e]
        pa, pb = nodes[mesh.cells[c][a]], nodes[mesh.cells[c][b]]
        mid = 0.5 * (pa + pb)
        r = np.hypot(mid[0], mid[1])
        ang = np.arctan2(mid[1], mid[0])
        if abs(r - r_outer) < 10 * tol or (r > r_outer - max(np.diff(rs)) * 0.5 and
                                           tol < ang < theta_max - tol):
            bf.append((c, e, bc_outer))
        elif not collapsed and abs(r - r_inner) < max(np.diff(rs)) * 0.5 and \
                tol < ang < theta_max - tol:
            bf.append((c, e, bc_inner))
        elif abs(ang) < 1e-8 or abs(mid[1]) < tol:
            bf.append((c, e, "wall"))
        elif abs(ang - theta_max) < 1e-8:
            bf.append((c, e, "wall"))
        else:
            bf.append((c, e, bc_outer))
    mesh.boundary_faces = bf
    return mesh.validate()


def half_annulus_mesh(r_inner, r_outer, nr, ntheta):
    """Upstream-facing half annulus around a cylinder at the origin.

    Inner circle is a wall, outer arc an inflow, the two flat cuts outflow.
    """
    rs = np.linspace(r_inner, r_outer, nr + 1)
    ts = np.linspace(np.pi / 2, 3 * np.pi / 2, ntheta + 1)
    nodes = []
    rows = []
    for r in rs:
        row = []
        for t in ts:
            row.append(len(nodes))
            nodes.append([r * np.cos(t), r * np.sin(t)])
        rows.append(row)
    nodes = np.asarray(nodes)
    cells = []
    for ir in range(nr):
        lo, hi = rows[ir], rows[ir + 1]
        for jt in range(ntheta):
            a, b, c, d = lo[jt], lo[jt + 1], hi[jt + 1], hi[jt]
            if (ir + jt) % 2 == 0:
                cells.append([a, b, c])
                cells.append([a, c, d])
            else:
                cells.append([a, b, d])
                cells.append([b, c, d])
    cells = _orient_ccw(nodes, np.asarray(cells, dtype=int))
    mesh = Mesh(2, nodes, cells, [])
    bf = []
    dr = (r_outer - r_inner) / nr
    for (c, e) in _boundary_edges(mesh).values():
        a, b = _EDGE_NODES[e]
        mid = 0.5 * (nodes[mesh.cells[c][a]] + nodes[mesh.cells[c][b]])
        r = np.hypot(mid[0], mid[1])
        if abs(mid[0]) < 1e-10 * r_outer:
            bf.append((c, e, "outflow"))
        elif r < r_inner + 0.5 * dr:
            bf.append((c, e, "wall"))
        else:
            bf.append((c, e, "inflow"))
    mesh.boundary_faces = bf
    return mesh.validate()


def step_channel_mesh(nx_unit=20):
    """Forward-facing step channel [0,3]x[0,1] minus the step x>0.6, y<0.2.

    ``nx_unit`` is the cell-pair resolution per unit length; it must make
    0.6 and 0.2 grid-aligned (multiples of 5 work).
    """
    if (nx_unit * 3) % 5 or nx_unit % 5:
        raise ValueError("nx_unit must be a multiple of 5 to align with the step")
    nx, ny = 3 * nx_unit, nx_unit
    xs = np.linspace(0.0, 3.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    ix_step = int(round(0.6 / 3.0 * nx))
    iy_step = int(round(0.2 * ny))
    nid = {}
    nodes = []
    for j in range(ny + 1):
        for i in range(nx + 1):
            if i > ix_step and j < iy_step:
                continue
            nid[(i, j)] = len(nodes)
            nodes.append([xs[i], ys[j]])
    nodes = np.asarray(nodes)
    cells = []
    for j in range(ny):
        for i in range(nx):
            if i >= ix_step and j < iy_step:
                continue
            a, b = nid[(i, j)], nid[(i + 1, j)]
            c, d = nid[(i + 1, j + 1)], nid[(i, j + 1)]
            if (i + j) % 2 == 0:
                cells.append([a, b, c])
                cells.append([a, c, d])
            else:
                cells.append([a, b, d])
                cells.append([b, c, d])
    cells = _orient_ccw(nodes, np.asarray(cells, dtype=int))
    mesh = Mesh(2, nodes, cells, [])
    tol = 1e-9
    bf = []
    for (c, e) in _boundary_edges(mesh).values():
        a, b = _EDGE_NODES[e]
        mid = 0.5 * (nodes[mesh.cells[c][a]] + nodes[mesh.cells[c][b]])
        if abs(mid[0]) < tol:
            bf.append((c, e, "inflow"))
        elif abs(mid[0] - 3.0) < tol:
            bf.append((c, e, "outflow"))
        else:
            bf.append((c, e, "wall"))
    mesh.boundary_faces = bf
    return mesh.validate()


# ---------------------------------------------------------------------------
# global subcell topology
# ---------------------------------------------------------------------------


class SubcellTopology:
    """Mesh-wide subcell geometry, global face registry and stencils.

    Global subcell ids are ``cell * Ns + m``.  The face registry lists all
    intra-cell faces first (cell-major, reference order), then one face per
    conforming segment of every mesh face (interior, periodic and boundary
    alike).  Each face stores the owning subcell pair, the physical length
    and the unit normal oriented left-to-right.
    """

    def __init__(self, mesh, ref):
        self.mesh = mesh
        self.ref = ref
        self.dim = mesh.dim
        self.nsub_per_cell = ref.nsub
        self._build_geometry()
        self._build_mesh_faces()
        self._build_face_registry()
        self._build_vertex_incidence()

    # -- per-cell affine geometry ------------------------------------------

    def _build_geometry(self):
        mesh, ref = self.mesh, self.ref
        x = mesh.cell_nodes()                       # (nc, dim+1, dim)
        nc, dim = mesh.ncells, self.dim
        if dim == 1:
            jac = (x[:, 1] - x[:, 0])[:, :, None]
        else:
            jac = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)
        det = np.linalg.det(jac)
        if np.any(det <= 0):
            raise DgfvError("negative cell Jacobian after orientation fix")
        self.origin = x[:, 0]
        self.jac = jac
        self.jinv = np.linalg.inv(jac)
        self.det = det
        self.cell_volumes = det * (1.0 if dim == 1 else 0.5)
        self.sub_areas = det[:, None] * ref.areas[None, :]
        self.sub_centroids = self.map_points(ref.centroids)
        nrm, lng = ref.face_ref_normals_lengths()
        self._ref_face_normals = nrm
        if dim == 1:
            self.intra_lengths = np.ones((nc, ref.nfaces))
            self.intra_normals = np.broadcast_to(
                nrm[None, :, :], (nc, ref.nfaces, 1)).copy()
            self.intra_mid = self.map_points(ref.face_ends[:, 0])
        else:
            a = self.map_points(ref.face_ends[:, 0])
            b = self.map_points(ref.face_ends[:, 1])
            d = b - a
            self.intra_lengths = np.linalg.norm(d, axis=2)
            n = np.stack([d[..., 1], -d[..., 0]], axis=-1) / self.intra_lengths[..., None]
            self.intra_normals = n
            self.intra_mid = 0.5 * (a + b)

    def map_points(self, ref_pts):
        """Map reference points (n, dim) into every cell, (nc, n, dim)."""
        return self.origin[:, None, :] + np.einsum(
            "cde,ne->cnd", self.jac, np.atleast_2d(ref_pts))

    # -- mesh faces and their conforming segments --------------------------

    def _build_mesh_faces(self):
        mesh, ref = self.mesh, self.ref
        nloc = 2 if self.dim == 1 else 3
        owner = {}
        interior = []
        for c in range(mesh.ncells):
            for e in range(nloc):
                key = mesh._face_nodes(c, e)
                if key in owner:
                    interior.append((owner[key], (c, e)))
                    del owner[key]
                else:
                    owner[key] = (c, e)
        tagged = {}
        for c, e, tag in mesh.boundary_faces:
            tagged[(c, e)] = tag
        # periodic pairs become interior-like faces
        per_faces = []
        for ia, ib in mesh.periodic_pairs:
            ca, ea, _ = mesh.boundary_faces[ia]
            cb, eb, _ = mesh.boundary_faces[ib]
            per_faces.append(((ca, ea), (cb, eb)))
        per_set = {fc for pair in per_faces for fc in pair}
        boundary = [fe for fe in owner.values() if fe not in per_set]
        for fe in boundary:
            if fe not in tagged:
                raise MeshFormatError(f"untagged boundary face at cell {fe[0]}")

        rows = []
        for (c, e), (v, b) in interior:
            rows.append((c, e, v, b, -1))
        for (c, e), (v, b) in per_faces:
            rows.append((c, e, v, b, -2))
        for (c, e) in boundary:
            rows.append((c, e, -1, -1, BC_TAGS.index(tagged[(c, e)].split(":")[0])))
        self.mf_left_cell = np.array([r[0] for r in rows], dtype=int)
        self.mf_left_edge = np.array([r[1] for r in rows], dtype=int)
        self.mf_right_cell = np.array([r[2] for r in rows], dtype=int)
        self.mf_right_edge = np.array([r[3] for r in rows], dtype=int)
        self.mf_bc = np.array([r[4] for r in rows], dtype=int)
        self.nmf = len(rows)
        self.nseg = len(ref.edge_segments[0])
        self._build_segments()

    def _edge_points(self, cell, edge, params):
        """Physical points at given parameters along a local cell edge."""
        if self.dim == 1:
            ref = np.array([[0.0]]) if edge == 0 else np.array([[1.0]])
            return self.map_points(ref)[cell]
        a_l, b_l = _EDGE_NODES[edge]
        pa = self.mesh.nodes[self.mesh.cells[cell][a_l]]
        pb = self.mesh.nodes[self.mesh.cells[cell][b_l]]
        return pa[None, :] + np.asarray(params)[:, None] * (pb - pa)[None, :]

    def _build_segments(self):
        """Per mesh face: segment endpoints, owners and conformity checks."""
        ref, mesh = self.ref, self.mesh
        nseg = self.nseg
        segs = ref.edge_segments
        nmf = self.nmf
        dim = self.dim
        self.seg_len = np.zeros((nmf, nseg))
        self.seg_normal = np.zeros((nmf, nseg, dim))
        self.seg_mid = np.zeros((nmf, nseg, dim))
        self.mf_left_owner = np.zeros((nmf, nseg), dtype=int)
        self.mf_right_owner = np.full((nmf, nseg), -1, dtype=int)
        self.mf_reversed = np.ones(nmf, dtype=bool)
        scale = np.sqrt(np.median(self.cell_volumes))
        for f in range(nmf):
            c, e = self.mf_left_cell[f], self.mf_left_edge[f]
            seg_l = segs[e if dim == 2 else e]
            cuts = np.array([s[1] for s in seg_l] + [seg_l[-1][2]])
            pts = self._edge_points(c, e, cuts)
            self.mf_left_owner[f] = [s[0] for s in seg_l]
            if dim == 1:
                self.seg_len[f] = 1.0
                self.seg_normal[f, 0, 0] = -1.0 if e == 0 else 1.0
                self.seg_mid[f, 0] = pts[0]
            else:
                d = pts[1:] - pts[:-1]
                self.seg_len[f] = np.linalg.norm(d, axis=1)
                n = np.stack([d[:, 1], -d[:, 0]], axis=1) / self.seg_len[f][:, None]
                self.seg_normal[f] = n
                self.seg_mid[f] = 0.5 * (pts[1:] + pts[:-1])
            v, b = self.mf_right_cell[f], self.mf_right_edge[f]
            if v < 0:
                continue
            seg_r = segs[b if dim == 2 else b]
            if len(seg_r) != nseg:
                raise SubdivisionError("non-conforming cross-cell interface")
            cuts_r = np.array([s[1] for s in seg_r] + [seg_r[-1][2]])
            pts_r = self._edge_points(v, b, cuts_r)
            owners_r = np.array([s[0] for s in seg_r])
            if dim == 1:
                self.mf_right_owner[f] = owners_r
                continue
            # shared edges are traversed in opposite directions by the two
            # CCW cells; periodic pairs may also come aligned
            shift = self.seg_mid[f].mean(axis=0) - 0.5 * (pts_r[0] + pts_r[-1])
            rev_err = np.max(np.linalg.norm(pts_r[::-1] + shift - pts, axis=1))
            fwd_err = np.max(np.linalg.norm(pts_r + shift - pts, axis=1))
            if rev_err <= 1e-9 * scale:
                self.mf_right_owner[f] = owners_r[::-1]
                self.mf_reversed[f] = True
            elif fwd_err <= 1e-9 * scale:
                self.mf_right_owner[f] = owners_r
                self.mf_reversed[f] = False
            else:
                raise SubdivisionError(
                    f"non-conforming interface between cells {c} and {v}"
                )

    # -- global face registry ----------------------------------------------

    def _build_face_registry(self):
        ref = self.ref
        nc, ns = self.mesh.ncells, ref.nsub
        nf_intra = ref.nfaces
        self.n_intra = nc * nf_intra
        gid = lambda cells, subs: cells * ns + subs
        cells = np.repeat(np.arange(nc), nf_intra)
        fidx = np.tile(np.arange(nf_intra), nc)
        left0 = gid(cells, ref.face_left[fidx])
        right0 = gid(cells, ref.face_right[fidx])
        len0 = self.intra_lengths.reshape(-1)
        nrm0 = self.intra_normals.reshape(-1, self.dim)
        mid0 = self.intra_mid.reshape(-1, self.dim)

        nseg = self.nseg
        f_ids = np.repeat(np.arange(self.nmf), nseg)
        s_ids = np.tile(np.arange(nseg), self.nmf)
        lcell = self.mf_left_cell[f_ids]
        left1 = gid(lcell, self.mf_left_owner[f_ids, s_ids])
        rcell = self.mf_right_cell[f_ids]
        rown = self.mf_right_owner[f_ids, s_ids]
        right1 = np.where(rcell >= 0, gid(np.maximum(rcell, 0), rown), -1)
        len1 = self.seg_len[f_ids, s_ids]
        nrm1 = self.seg_normal[f_ids, s_ids]
        mid1 = self.seg_mid[f_ids, s_ids]

        self.face_left = np.concatenate([left0, left1])
        self.face_right = np.concatenate([right0, right1])
        self.face_length = np.concatenate([len0, len1])
        self.face_normal = np.concatenate([nrm0, nrm1])
        self.face_mid = np.concatenate([mid0, mid1])
        self.face_kind = np.concatenate([
            np.zeros(self.n_intra, dtype=int), np.ones(self.nmf * nseg, dtype=int)])
        self.face_bc = np.concatenate([
            np.full(self.n_intra, -1, dtype=int), self.mf_bc[f_ids]])
        self.face_meshface = np.concatenate([
            np.full(self.n_intra, -1, dtype=int), f_ids])
        self.face_segment = np.concatenate([
            np.full(self.n_intra, -1, dtype=int), s_ids])
        self.nfaces = len(self.face_left)
        self.nsub_total = nc * ns
        self.interior_mask = self.face_right >= 0

        # subcell -> incident faces (CSR)
        sub_faces = [[] for _ in range(self.nsub_total)]
        for i in range(self.nfaces):
            sub_faces[self.face_left[i]].append(i)
            if self.face_right[i] >= 0:
                sub_faces[self.face_right[i]].append(i)
        self.subface_indptr = np.zeros(self.nsub_total + 1, dtype=int)
        self.subface_indptr[1:] = np.cumsum([len(s) for s in sub_faces])
        self.subface_indices = np.array(
            [f for s in sub_faces for f in s], dtype=int)

        # closed-polygon identity per subcell
        areas = self.sub_areas.reshape(-1)
        acc = np.zeros((self.nsub_total, self.dim))
        ln = self.face_length[:, None] * self.face_normal
        np.add.at(acc, self.face_left, ln)
        sel = self.face_right >= 0
        np.add.at(acc, self.face_right[sel], -ln[sel])
        perim = np.zeros(self.nsub_total)
        np.add.at(perim, self.face_left, self.face_length)
        np.add.at(perim, self.face_right[sel], self.face_length[sel])
        worst = np.max(np.linalg.norm(acc, axis=1) / perim)
        if worst > 1e-11:
            raise SubdivisionError(f"subcell face loops do not close (err {worst:.2e})")
        del areas

    # -- vertex incidence, LMP stencils, smoothing neighborhoods ------------

    def _build_vertex_incidence(self):
        from scipy.spatial import cKDTree

        ref, nc, ns = self.ref, self.mesh.ncells, self.ref.nsub
        pair_sub = []
        coords = []
        for m in range(ns):
            vm = ref.vertices[m]
            mapped = self.map_points(vm)            # (nc, nv, dim)
            for c in range(nc):
                for p in mapped[c]:
                    pair_sub.append(c * ns + m)
                    coords.append(p)
        coords = np.asarray(coords)
        pair_sub = np.asarray(pair_sub, dtype=int)
        scale = np.sqrt(np.median(self.cell_volumes))
        tree = cKDTree(coords)
        groups = tree.query_pairs(1e-9 * max(scale, 1e-30), output_type="ndarray")
        parent = np.arange(len(coords))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b in groups:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[rb] = ra
        roots = np.array([find(i) for i in range(len(coords))])
        _, vid = np.unique(roots, return_inverse=True)
        self.n_vertices = vid.max() + 1 if len(vid) else 0
        self.vertex_coords = np.zeros((self.n_vertices, self.dim))
        self.vertex_coords[vid] = coords

        # unique (subcell, vertex) pairs
        pair_key = pair_sub.astype(np.int64) * self.n_vertices + vid
        _, first = np.unique(pair_key, return_index=True)
        first.sort()
        self.pv_sub = pair_sub[first]
        self.pv_vertex = vid[first]

        incid = [[] for _ in range(self.n_vertices)]
        for s, q in zip(self.pv_sub, self.pv_vertex):
            incid[q].append(s)
        self._vertex_subs = incid

        # static reduction layouts: pairs grouped by vertex and by subcell
        order = np.argsort(self.pv_vertex, kind="stable")
        self.pv_byvertex = order
        counts = np.bincount(self.pv_vertex, minlength=self.n_vertices)
        self.pv_v_indptr = np.concatenate([[0], np.cumsum(counts)]).astype(int)
        self.pv_s_indptr = np.searchsorted(
            self.pv_sub, np.arange(self.nsub_total + 1))

        stencils = [set() for _ in range(self.nsub_total)]
        for s, q in zip(self.pv_sub, self.pv_vertex):
            stencils[s].update(incid[q])
        self.stencil_indptr = np.zeros(self.nsub_total + 1, dtype=int)
        self.stencil_indptr[1:] = np.cumsum([len(s) for s in stencils])
        self.stencil_indices = np.array(
            [i for s in stencils for i in sorted(s)], dtype=int)

        # face -> subcells sharing one of the face's endpoint nodes
        tree_v = cKDTree(self.vertex_coords) if self.n_vertices else None
        ends = np.zeros((self.nfaces, 2, self.dim))
        intra = self.face_kind == 0
        if np.any(intra):
            cells = np.repeat(np.arange(nc), ref.nfaces)
            fidx = np.tile(np.arange(ref.nfaces), nc)
            if self.dim == 1:
                pt = self.intra_mid.reshape(-1, 1)
                ends[intra, 0] = pt
                ends[intra, 1] = pt
            else:
                a = self.map_points(ref.face_ends[:, 0]).reshape(-1, 2)
                b = self.map_points(ref.face_ends[:, 1]).reshape(-1, 2)
                ends[intra, 0] = a
                ends[intra, 1] = b
        kind1 = ~intra
        if np.any(kind1):
            if self.dim == 1:
                ends[kind1, 0] = self.face_mid[kind1]
                ends[kind1, 1] = self.face_mid[kind1]
            else:
                f_ids = self.face_meshface[kind1]
                s_ids = self.face_segment[kind1]
                mids = self.face_mid[kind1]
                half = 0.5 * self.face_length[kind1]
                tang = np.stack([-self.face_normal[kind1][:, 1],
                                 self.face_normal[kind1][:, 0]], axis=1)
                ends[kind1, 0] = mids - half[:, None] * tang
                ends[kind1, 1] = mids + half[:, None] * tang
        flat = ends.reshape(-1, self.dim)
        dist, idx = tree_v.query(flat)
        if np.max(dist) > 1e-7 * max(scale, 1e-30):
            raise SubdivisionError("face endpoint not found in vertex registry")
        fv = idx.reshape(self.nfaces, 2)
        fsets = []
        for i in range(self.nfaces):
            s = set(incid[fv[i, 0]]) | set(incid[fv[i, 1]])
            fsets.append(sorted(s))
        self.facenode_indptr = np.zeros(self.nfaces + 1, dtype=int)
        self.facenode_indptr[1:] = np.cumsum([len(s) for s in fsets])
        self.facenode_indices = np.array(
            [i for s in fsets for i in s], dtype=int)

        # cell-level vertex incidence (third-degree smooth detection)
        cells_of_node = [[] for _ in range(len(self.mesh.nodes))]
        for c, conn in enumerate(self.mesh.cells):
            for nd in conn:
                cells_of_node[nd].append(c)
        pc_cell, pc_node = [], []
        for c, conn in enumerate(self.mesh.cells):
            for nd in conn:
                pc_cell.append(c)
                pc_node.append(nd)
        self.cellv_cell = np.asarray(pc_cell, dtype=int)
        self.cellv_node = np.asarray(pc_node, dtype=int)
        self.cells_of_node = cells_of_node
        order = np.argsort(self.cellv_node, kind="stable")
        self.cellv_bynode = order
        counts = np.bincount(self.cellv_node, minlength=len(self.mesh.nodes))
        indptr = np.concatenate([[0], np.cumsum(counts)]).astype(int)
        # clip empty trailing segments so reduceat stays in bounds; unused
        # nodes are masked out afterwards anyway
        self.cellv_n_indptr = np.minimum(indptr, max(len(order) - 1, 0))
        self.cellv_node_used = counts > 0
        self.cellv_c_indptr = np.searchsorted(
            self.cellv_cell, np.arange(self.mesh.ncells + 1))

    def lmp_stencil(self, subcell):
        """Face-and-node neighbor stencil of one global subcell id."""
        lo, hi = self.stencil_indptr[subcell], self.stencil_indptr[subcell + 1]
        return set(self.stencil_indices[lo:hi])
