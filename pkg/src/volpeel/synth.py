"""Synthetic machining domains for tests, demos, and benchmarks.

Everything here is deterministic: grids are Kuhn/Freudenthal six-tet
subdivisions of (possibly warped) hexahedral cells, which are
face-compatible across neighboring cells without parity tricks.
"""

import numpy as np

from .tetmesh import BoundaryTag, TetMesh

# Six tets around the main diagonal of a cell; corners indexed bit-wise
# (ix, iy, iz) -> c[ix][iy][iz].
_KUHN = [
    (0b000, 0b100, 0b110, 0b111),
    (0b000, 0b110, 0b010, 0b111),
    (0b000, 0b010, 0b011, 0b111),
    (0b000, 0b011, 0b001, 0b111),
    (0b000, 0b001, 0b101, 0b111),
    (0b000, 0b101, 0b100, 0b111),
]


def unit_tet():
    """The canonical unit tet with volume 1/6."""
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    return TetMesh(v, np.array([[0, 1, 2, 3]]))


def cube_five():
    """Unit cube split into five tets (one central, four corner)."""
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                  [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)
    t = np.array([[0, 1, 3, 4], [1, 2, 3, 6], [1, 4, 5, 6],
                  [3, 4, 6, 7], [1, 3, 4, 6]])
    return TetMesh(v, t)


def box_grid(nx, ny, nz, size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0),
             keep=None, warp=None):
    """Kuhn-subdivided box grid of nx*ny*nz cells.

    Parameters
    ----------
    keep : callable, optional
        Vectorized predicate over cell centers (m, 3) -> bool mask; cells
        where it is False are dropped (all six tets).
    warp : callable, optional
        Maps the (n, 3) vertex array to new positions (applied before the
        keep predicate is evaluated on warped cell centers).
    """
    nx, ny, nz = int(nx), int(ny), int(nz)
    sx, sy, sz = size
    ox, oy, oz = origin
    ii, jj, kk = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1),
                             np.arange(nz + 1), indexing="ij")
    verts = np.stack([ox + sx * ii / nx, oy + sy * jj / ny,
                      oz + sz * kk / nz], axis=-1).reshape(-1, 3)
    if warp is not None:
        verts = np.asarray(warp(verts), dtype=float)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    ci, cj, ck = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                             indexing="ij")
    ci, cj, ck = ci.ravel(), cj.ravel(), ck.ravel()
    corners = np.empty((len(ci), 8), dtype=np.int64)
    for bit in range(8):
        corners[:, bit] = vid(ci + (bit >> 2 & 1), cj + (bit >> 1 & 1),
                              ck + (bit & 1))
    if keep is not None:
        centers = verts[corners].mean(axis=1)
        mask = np.asarray(keep(centers), dtype=bool)
        corners = corners[mask]
    tets = np.concatenate([corners[:, list(pat)] for pat in _KUHN])
    # interleave per cell so tet order is cell-major (stable, readable dumps)
    tets = tets.reshape(6, -1, 4).transpose(1, 0, 2).reshape(-1, 4)
    used = np.unique(tets)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TetMesh(verts[used], remap[tets])


def cube_grid(n):
    """Unit cube as an n^3-cell Kuhn grid (6 n^3 tets)."""
    return box_grid(n, n, n)


def cube_scene(n=6):
    """Unit cube with the floor tagged PART -- the simplest full scene."""
    def rule(centroids, normals):
        bottom = normals[:, 2] < -0.5
        return np.where(bottom, np.int8(BoundaryTag.PART),
                        np.int8(BoundaryTag.STOCK))

    return tag_faces(cube_grid(n), rule)


def bar(n_long=24, n_cross=5, length=2.4, width=0.5):
    return box_grid(n_long, n_cross, n_cross, size=(length, width, width))


def tag_faces(mesh, rule):
    """Re-tag boundary faces via rule(centroids, outward_normals) -> int8."""
    tris = mesh.boundary_face_vertices()
    centroids = mesh.vertices[tris].mean(axis=1)
    t, lf = mesh.boundary_faces[:, 0], mesh.boundary_faces[:, 1]
    s = mesh.face_vectors[t, lf]          # inward area vectors
    normals = -s / np.linalg.norm(s, axis=1, keepdims=True)
    return mesh.with_tags(np.asarray(rule(centroids, normals), dtype=np.int8))


# -- scenes ---------------------------------------------------------------

BOWL_CENTER = np.array([0.5, 0.5, 0.7])
BOWL_RADIUS = 0.45


def bowl_cavity(n=14):
    """Hemispherical cavity clipped by the stock top plane z=1.

    The domain is the removable material inside a bowl: a ball around
    BOWL_CENTER intersected with the unit cube, so the ball's top is cut
    off by z=1 (the stock opening).  All curved boundary faces are PART,
    the flat opening is STOCK.
    """
    def keep(c):
        return np.linalg.norm(c - BOWL_CENTER, axis=1) <= BOWL_RADIUS

    mesh = box_grid(n, n, n, keep=keep)

    def rule(centroids, normals):
        top = centroids[:, 2] > 1.0 - 1e-9
        return np.where(top, np.int8(BoundaryTag.STOCK), np.int8(BoundaryTag.PART))

    return tag_faces(mesh, rule)


FLASK_CENTER = np.array([0.42, 0.5, 0.52])
FLASK_RADIUS = 0.34
FLASK_NECK_CENTER = np.array([0.60, 0.5])
FLASK_NECK_RADIUS = 0.20


def flask(n=14):
    """Tilted bulb cavity drained by an off-axis neck.

    The removable material fills a ball plus a cylindrical neck running
    up to the stock plane z=1.  The neck sits to the side of the bulb,
    so the far shoulder of the bulb overhangs the interior: wall normals
    there converge and trap the flow at a single spot, while the exit
    route (up and over toward the neck) stays wide enough that one
    escape anchor clears the trap for good.  Neck opening is STOCK,
    everything else PART.
    """
    def keep(c):
        in_bulb = np.linalg.norm(c - FLASK_CENTER, axis=1) <= FLASK_RADIUS
        r = np.linalg.norm(c[:, :2] - FLASK_NECK_CENTER, axis=1)
        in_neck = (r <= FLASK_NECK_RADIUS) & (c[:, 2] >= FLASK_CENTER[2])
        return in_bulb | in_neck

    mesh = box_grid(n, n, n, keep=keep)

    def rule(centroids, normals):
        top = centroids[:, 2] > 1.0 - 1e-9
        return np.where(top, np.int8(BoundaryTag.STOCK), np.int8(BoundaryTag.PART))

    return tag_faces(mesh, rule)


def part_surface_of(mesh):
    """(vertices, triangles) of the PART-tagged boundary, outward-oriented.

    Orientation is outward with respect to the domain, i.e. pointing into
    the part solid; the part model's own surface normal is the negation.
    """
    tris = mesh.boundary_face_vertices(mesh.faces_with_tag(BoundaryTag.PART))
    used = np.unique(tris)
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return mesh.vertices[used].copy(), remap[tris]


def two_stream_bar(n_long=24, n_cross=5, length=2.4, width=0.5):
    """Bar whose side walls are PART and whose two ends are STOCK.

    With opposing critical anchors at the two ends the optimized field
    forms two streams colliding mid-bar; the collision sheet's rim lies
    on the PART side walls (the admissible Type III configuration).
    """
    mesh = bar(n_long, n_cross, length, width)

    def rule(centroids, normals):
        ends = (centroids[:, 0] < 1e-9) | (centroids[:, 0] > length - 1e-9)
        return np.where(ends, np.int8(BoundaryTag.STOCK), np.int8(BoundaryTag.PART))

    return tag_faces(mesh, rule)


def end_tets(mesh, axis=0, side="low", band=None):
    """Tets owning boundary faces on one end slab of an axis-aligned mesh."""
    t, lf = mesh.boundary_faces[:, 0], mesh.boundary_faces[:, 1]
    tris = mesh.boundary_face_vertices()
    c = mesh.vertices[tris].mean(axis=1)[:, axis]
    lo = mesh.vertices[:, axis].min()
    hi = mesh.vertices[:, axis].max()
    if band is None:
        band = 1e-9
    sel = c < lo + band if side == "low" else c > hi - band
    return np.unique(t[sel])


def thick_shell(n=16, r_inner=0.24, r_outer=0.47):
    """Spherical shell domain centered in the unit cube."""
    c = np.array([0.5, 0.5, 0.5])

    def keep(cc):
        r = np.linalg.norm(cc - c, axis=1)
        return (r >= r_inner) & (r <= r_outer)

    return box_grid(n, n, n, keep=keep)


def column_removed_cube(n=10, band=2):
    """Unit cube with the central vertical column of cells removed."""
    lo = (n - band) / (2.0 * n)
    hi = (n + band) / (2.0 * n)

    def keep(c):
        return ~((c[:, 0] > lo) & (c[:, 0] < hi) & (c[:, 1] > lo) & (c[:, 1] < hi))

    return box_grid(n, n, n, keep=keep)


def terrain_height(x, y, amplitude=0.15):
    return 0.25 + amplitude * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)


def terrain(nx=28, ny=28, nz=10, amplitude=0.15):
    """Sheared-grid freeform scene: wavy part surface under flat stock.

    The part (machining target) is the bottom surface z = h(x, y); the
    removable material fills up to the stock top z = 1.  Bottom faces are
    PART, everything else STOCK.
    """
    def warp(v):
        h = terrain_height(v[:, 0], v[:, 1], amplitude)
        out = v.copy()
        out[:, 2] = h + v[:, 2] * (1.0 - h)
        return out

    mesh = box_grid(nx, ny, nz, warp=warp)

    def rule(centroids, normals):
        # the wavy floor is the only boundary with a downward normal
        # (slopes stay below 45 degrees for the default amplitude)
        bottom = normals[:, 2] < -0.5
        return np.where(bottom, np.int8(BoundaryTag.PART), np.int8(BoundaryTag.STOCK))

    return tag_faces(mesh, rule)


# -- source surfaces ------------------------------------------------------

def icosphere(radius=1.0, center=(0.0, 0.0, 0.0), subdivisions=2):
    """Outward-oriented triangulated sphere (subdivided icosahedron)."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
                  [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
                  [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]],
                 dtype=float)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
                  [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
                  [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
                  [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    verts = [row for row in v]
    cache = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in cache:
            m = verts[a] + verts[b]
            verts.append(m / np.linalg.norm(m))
            cache[key] = len(verts) - 1
        return cache[key]

    faces = f.tolist()
    for _ in range(subdivisions):
        nxt = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nxt += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = nxt
    pts = np.array(verts) * radius + np.asarray(center, dtype=float)
    return pts, np.array(faces, dtype=np.int64)
