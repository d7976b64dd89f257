"""Tetrahedral meshes of the machining domain.

The domain is the removable material between the stock surface and the
part surface, handed to us pre-tetrahedralized.  Boundary faces carry a
provenance tag (PART / STOCK / UNTAGGED) that downstream singularity
classification and Dirichlet conditions rely on.
"""

import os
from enum import IntEnum
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateTet, NonManifoldFace, ParseError

DEGENERACY_THRESHOLD = 1e-12  # mm^3; slivers below this destabilize cotan weights

# Local face k is the face opposite local vertex k, ordered so that its
# cross-product normal points outward for a positively oriented tet.
FACE_LOCAL = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]], dtype=np.int64)


class BoundaryTag(IntEnum):
    UNTAGGED = 0
    PART = 1
    STOCK = 2


def _tag_from_name(name):
    try:
        return BoundaryTag[name.upper()]
    except KeyError:
        raise ParseError(f"unknown boundary tag {name!r}")


class TetMesh:
    """Immutable tetrahedral mesh with adjacency and boundary provenance.

    Construction validates orientation (negative tets are reoriented by
    swapping two vertices), rejects degenerate tets and non-manifold
    faces, and builds face adjacency.  All derived arrays are read-only.
    """

    def __init__(self, vertices, tets, boundary_tags=None):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        tets = np.ascontiguousarray(tets, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ParseError("vertices must be (n, 3)")
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise ParseError("tets must be (m, 4)")
        if tets.size and (tets.min() < 0 or tets.max() >= len(vertices)):
            raise ParseError("tet vertex index out of range")
        for a in range(4):
            for b in range(a + 1, 4):
                if np.any(tets[:, a] == tets[:, b]):
                    t = int(np.nonzero(tets[:, a] == tets[:, b])[0][0])
                    raise DegenerateTet(f"tet {t} repeats a vertex")

        vols = _signed_volumes(vertices, tets)
        flip = vols < 0
        if flip.any():
            tets = tets.copy()
            tets[flip] = tets[flip][:, [0, 1, 3, 2]]
            vols = np.abs(vols)
        if np.any(vols < DEGENERACY_THRESHOLD):
            t = int(np.argmin(vols))
            raise DegenerateTet(f"tet {t} has volume {vols[t]:.3e} mm^3")

        self.vertices = vertices
        self.tets = tets
        self.volumes = vols
        self.neighbors, boundary = _build_adjacency(tets)
        self.boundary_faces = boundary  # (nb, 2) rows of (tet, local_face)
        if boundary_tags is None:
            boundary_tags = np.zeros(len(boundary), dtype=np.int8)
        self.boundary_tags = np.asarray(boundary_tags, dtype=np.int8)
        if len(self.boundary_tags) != len(boundary):
            raise ParseError("boundary tag count does not match boundary faces")
        # Inward (toward the opposite vertex) area vectors; the four vectors
        # of a tet sum to zero, and grad(hat_k) = s[t, k] / (3 V_t).
        self.face_vectors = _inward_face_vectors(vertices, tets)
        for arr in (self.vertices, self.tets, self.volumes, self.neighbors,
                    self.boundary_faces, self.boundary_tags, self.face_vectors):
            arr.setflags(write=False)

    # -- basic sizes ------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_tets(self):
        return len(self.tets)

    @property
    def total_volume(self):
        return float(self.volumes.sum())

    def bbox_diagonal(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    # -- derived adjacency (lazy, cached) ---------------------------------

    @cached_property
    def centroids(self):
        c = self.vertices[self.tets].mean(axis=1)
        c.setflags(write=False)
        return c

    @cached_property
    def vertex_tets(self):
        """CSR-style (offsets, tet indices) of tets incident to each vertex."""
        order = np.argsort(self.tets.ravel(), kind="stable")
        tet_of_slot = order // 4
        counts = np.bincount(self.tets.ravel(), minlength=self.n_vertices)
        offsets = np.concatenate(([0], np.cumsum(counts)))
        return offsets, tet_of_slot

    def tets_of_vertex(self, v):
        offsets, items = self.vertex_tets
        return items[offsets[v]:offsets[v + 1]]

    @cached_property
    def vertex_neighbors(self):
        """CSR-style (offsets, vertex indices) of 1-ring vertex adjacency."""
        edges = self.tets[:, [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]]
        edges = edges.reshape(-1, 2)
        both = np.vstack([edges, edges[:, ::-1]])
        key = both[:, 0] * np.int64(self.n_vertices) + both[:, 1]
        uniq = np.unique(key)
        src = (uniq // self.n_vertices).astype(np.int64)
        dst = (uniq % self.n_vertices).astype(np.int64)
        counts = np.bincount(src, minlength=self.n_vertices)
        offsets = np.concatenate(([0], np.cumsum(counts)))
        return offsets, dst

    def neighbors_of_vertex(self, v):
        offsets, items = self.vertex_neighbors
        return items[offsets[v]:offsets[v + 1]]

    @cached_property
    def boundary_vertex_mask(self):
        mask = np.zeros(self.n_vertices, dtype=bool)
        t = self.boundary_faces[:, 0]
        lf = self.boundary_faces[:, 1]
        mask[self.tets[t[:, None], FACE_LOCAL[lf]].ravel()] = True
        mask.setflags(write=False)
        return mask

    def boundary_face_vertices(self, which=None):
        """Vertex triples of boundary faces (outward orientation).

        ``which`` optionally restricts to an index array into boundary_faces.
        """
        faces = self.boundary_faces if which is None else self.boundary_faces[which]
        t = faces[:, 0]
        lf = faces[:, 1]
        return self.tets[t[:, None], FACE_LOCAL[lf]]

    def faces_with_tag(self, tag):
        return np.nonzero(self.boundary_tags == int(tag))[0]

    def tagged_edge_set(self, tag):
        """Set of sorted vertex-pair edges of boundary faces carrying a tag."""
        tris = self.boundary_face_vertices(self.faces_with_tag(tag))
        edges = set()
        for a, b, c in tris:
            edges.add((min(a, b), max(a, b)))
            edges.add((min(b, c), max(b, c)))
            edges.add((min(a, c), max(a, c)))
        return edges

    @cached_property
    def _centroid_tree(self):
        return cKDTree(self.centroids)

    # -- queries ----------------------------------------------------------

    def barycentric(self, t, x):
        """Barycentric coordinates of point x in tet t."""
        s = self.face_vectors[t]
        v = self.vertices[self.tets[t]]
        vol3 = 3.0 * self.volumes[t]
        lam = np.empty(4)
        for k in range(4):
            on_face = v[(k + 1) % 4]
            lam[k] = s[k] @ (np.asarray(x) - on_face) / vol3
        return lam

    def locate_point(self, x, tol=1e-9):
        """Tet containing x, or None.

        Containment means all barycentric coordinates >= -tol; ties on a
        shared face break to the lowest tet index.
        """
        x = np.asarray(x, dtype=np.float64)
        k = min(32, self.n_tets)
        _, cand = self._centroid_tree.query(x, k=k)
        cand = np.atleast_1d(cand)
        hits = [int(t) for t in cand if self.barycentric(t, x).min() >= -tol]
        if hits:
            return min(hits)
        # fall back to a full scan; k-NN candidates can miss on thin domains
        for t in range(self.n_tets):
            if self.barycentric(t, x).min() >= -tol:
                return t
        return None

    def with_tags(self, boundary_tags):
        """Copy of this mesh with replaced boundary tags."""
        return TetMesh(self.vertices.copy(), self.tets.copy(),
                       np.asarray(boundary_tags, dtype=np.int8).copy())


# -- geometric primitives -------------------------------------------------

def _signed_volumes(vertices, tets):
    p = vertices[tets]
    e = p[:, 1:] - p[:, :1]
    return np.linalg.det(e) / 6.0


def _inward_face_vectors(vertices, tets):
    p = vertices[tets]
    s = np.empty((len(tets), 4, 3))
    for k in range(4):
        a, b, c = FACE_LOCAL[k]
        s[:, k] = -0.5 * np.cross(p[:, b] - p[:, a], p[:, c] - p[:, a])
    return s


def tet_volume(mesh, t):
    """Volume of tet t in mm^3."""
    return float(mesh.volumes[t])


def face_area_vector(mesh, t, opposite_vertex):
    """Area vector of the face opposite a local vertex, oriented toward it.

    The four vectors of any tet sum to zero.
    """
    return np.array(mesh.face_vectors[t, opposite_vertex])


def locate_point(mesh, x):
    return mesh.locate_point(x)


# -- adjacency ------------------------------------------------------------

def _build_adjacency(tets):
    nt = len(tets)
    faces = tets[:, FACE_LOCAL]                      # (nt, 4, 3)
    keys = np.sort(faces.reshape(-1, 3), axis=1)     # canonical vertex triple
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    sk = keys[order]
    same = np.all(sk[1:] == sk[:-1], axis=1)
    # runs of identical keys; length > 2 is non-manifold
    run_start = np.concatenate(([True], ~same))
    run_id = np.cumsum(run_start) - 1
    run_len = np.bincount(run_id)
    if np.any(run_len > 2):
        bad = sk[run_start][run_len > 2][0]
        raise NonManifoldFace(f"face {tuple(int(v) for v in bad)} shared by "
                              f"{int(run_len.max())} tets")
    neighbors = np.full((nt, 4), -1, dtype=np.int64)
    slot = order  # flat index = tet*4 + local_face
    pair_first = np.nonzero(run_start)[0][run_len == 2]
    a = slot[pair_first]
    b = slot[pair_first + 1]
    neighbors[a // 4, a % 4] = b // 4
    neighbors[b // 4, b % 4] = a // 4
    single = np.nonzero(run_start)[0][run_len == 1]
    s = slot[single]
    boundary = np.stack([s // 4, s % 4], axis=1)
    boundary = boundary[np.lexsort((boundary[:, 1], boundary[:, 0]))]
    return neighbors, np.ascontiguousarray(boundary)


# -- boundary tagging -----------------------------------------------------

def tag_boundary_from_surface(mesh, surf_vertices, surf_triangles, eps=None):
    """Tag boundary faces PART when within eps of a given part surface.

    Faces farther than eps from the surface are tagged STOCK.  Default
    eps is 1e-4 of the bounding-box diagonal.
    """
    from .geometry import closest_point_distances

    if eps is None:
        eps = 1e-4 * mesh.bbox_diagonal()
    tris = mesh.boundary_face_vertices()
    centroids = mesh.vertices[tris].mean(axis=1)
    d = closest_point_distances(centroids, np.asarray(surf_vertices, float),
                                np.asarray(surf_triangles, np.int64))
    tags = np.where(d <= eps, np.int8(BoundaryTag.PART), np.int8(BoundaryTag.STOCK))
    return mesh.with_tags(tags)


def _apply_sidecar_tags(mesh, path):
    tags = np.array(mesh.boundary_tags, dtype=np.int8)
    index = {(int(t), int(lf)): i for i, (t, lf) in enumerate(mesh.boundary_faces)}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#")[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 'tet local_face TAG'")
            key = (int(parts[0]), int(parts[1]))
            if key not in index:
                raise ParseError(f"{path}:{lineno}: {key} is not a boundary face")
            tags[index[key]] = _tag_from_name(parts[2])
    return mesh.with_tags(tags)


# -- file I/O -------------------------------------------------------------

def load_mesh(path, format="TETGEN_NODE_ELE", tags_path=None):
    """Load a tet mesh and build its adjacency.

    TETGEN_NODE_ELE accepts the .node or .ele path (or the basename); a
    sidecar '<base>.tags' with 'tet local_face PART|STOCK' lines is applied
    when present.  VTK_LEGACY reads ASCII unstructured grids (cell type 10).
    """
    path = os.fspath(path)
    if format == "TETGEN_NODE_ELE":
        base = path
        for ext in (".node", ".ele"):
            if base.endswith(ext):
                base = base[: -len(ext)]
        vertices = _read_node(base + ".node")
        tets = _read_ele(base + ".ele", len(vertices))
        mesh = TetMesh(vertices, tets)
        if tags_path is None and os.path.exists(base + ".tags"):
            tags_path = base + ".tags"
    elif format == "VTK_LEGACY":
        vertices, tets = _read_vtk(path)
        mesh = TetMesh(vertices, tets)
    else:
        raise ParseError(f"unknown mesh format {format!r}")
    if tags_path is not None:
        mesh = _apply_sidecar_tags(mesh, tags_path)
    return mesh


def save_mesh(mesh, path, format="TETGEN_NODE_ELE"):
    """Write a mesh back out; float repr round-trips bit-exactly."""
    path = os.fspath(path)
    if format == "TETGEN_NODE_ELE":
        base = path
        for ext in (".node", ".ele"):
            if base.endswith(ext):
                base = base[: -len(ext)]
        with open(base + ".node", "w") as fh:
            fh.write(f"{mesh.n_vertices} 3 0 0\n")
            for i, (x, y, z) in enumerate(mesh.vertices.tolist()):
                fh.write(f"{i} {x!r} {y!r} {z!r}\n")
        with open(base + ".ele", "w") as fh:
            fh.write(f"{mesh.n_tets} 4 0\n")
            for i, (a, b, c, d) in enumerate(mesh.tets):
                fh.write(f"{i} {a} {b} {c} {d}\n")
        if np.any(mesh.boundary_tags != BoundaryTag.UNTAGGED):
            with open(base + ".tags", "w") as fh:
                for (t, lf), tag in zip(mesh.boundary_faces, mesh.boundary_tags):
                    fh.write(f"{t} {lf} {BoundaryTag(tag).name}\n")
        return base
    if format == "VTK_LEGACY":
        with open(path, "w") as fh:
            fh.write("# vtk DataFile Version 2.0\nvolpeel mesh\nASCII\n")
            fh.write("DATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {mesh.n_vertices} double\n")
            for x, y, z in mesh.vertices.tolist():
                fh.write(f"{x!r} {y!r} {z!r}\n")
            fh.write(f"CELLS {mesh.n_tets} {mesh.n_tets * 5}\n")
            for a, b, c, d in mesh.tets:
                fh.write(f"4 {a} {b} {c} {d}\n")
            fh.write(f"CELL_TYPES {mesh.n_tets}\n")
            fh.write("\n".join(["10"] * mesh.n_tets) + "\n")
        return path
    raise ParseError(f"unknown mesh format {format!r}")


def _data_lines(path):
    with open(path) as fh:
        for line in fh:
            line = line.split("#")[0].strip()
            if line:
                yield line


def _read_node(path):
    lines = _data_lines(path)
    try:
        header = next(lines).split()
        n = int(header[0])
        rows = [next(lines).split() for _ in range(n)]
    except (StopIteration, ValueError, IndexError) as exc:
        raise ParseError(f"malformed .node file {path}: {exc}")
    try:
        coords = np.array([[float(r[1]), float(r[2]), float(r[3])] for r in rows])
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed .node row in {path}: {exc}")
    return coords


def _read_ele(path, n_vertices):
    lines = _data_lines(path)
    try:
        header = next(lines).split()
        n = int(header[0])
        rows = [next(lines).split() for _ in range(n)]
        first_index = int(rows[0][0]) if rows else 0
        tets = np.array([[int(r[1]), int(r[2]), int(r[3]), int(r[4])] for r in rows],
                        dtype=np.int64)
    except (StopIteration, ValueError, IndexError) as exc:
        raise ParseError(f"malformed .ele file {path}: {exc}")
    if first_index == 1 or (tets.size and tets.min() == 1 and tets.max() == n_vertices):
        tets -= 1
    return tets


def _read_vtk(path):
    tokens = []
    with open(path) as fh:
        body = fh.read()
    if "ASCII" not in body.upper():
        raise ParseError(f"{path}: only ASCII legacy VTK is supported")
    tokens = body.split()
    upper = [t.upper() for t in tokens]
    try:
        i = upper.index("POINTS")
        n_pts = int(tokens[i + 1])
        coords = np.array(tokens[i + 3:i + 3 + 3 * n_pts], dtype=np.float64)
        vertices = coords.reshape(n_pts, 3)
        j = upper.index("CELLS")
        n_cells = int(tokens[j + 1])
        k = j + 3
        cells = []
        for _ in range(n_cells):
            cnt = int(tokens[k])
            cells.append([int(v) for v in tokens[k + 1:k + 1 + cnt]])
            k += cnt + 1
        ct = upper.index("CELL_TYPES")
        types = [int(v) for v in tokens[ct + 2:ct + 2 + n_cells]]
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed VTK file {path}: {exc}")
    tets = [c for c, ty in zip(cells, types) if ty == 10]
    if not tets:
        raise ParseError(f"{path}: no tetrahedral (type 10) cells")
    return vertices, np.array(tets, dtype=np.int64)
