"""Pure-numpy reference implementations of the hot kernels.

These are the semantics the compiled backend must match: identical
triplet emission order for the stiffness assembly and identical
vertex/triangle ordering for marching tetrahedra (welded points sorted
by their (lo, hi) edge key, triangles in (tet, case-sub-triangle) order).
"""

import numpy as np

BACKEND = "pure"

# Local edge k connects EDGE_LOCAL[k] = (a, b) with a < b.
EDGE_LOCAL = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]],
                      dtype=np.int64)

# inside-vertex bitmask -> triangles as triples of local edge indices.
# Quads are split fan-wise from their first point.
MT_TABLE = {
    1: [(0, 1, 2)],
    2: [(0, 3, 4)],
    4: [(1, 3, 5)],
    8: [(2, 4, 5)],
    3: [(1, 3, 4), (1, 4, 2)],
    5: [(0, 3, 5), (0, 5, 2)],
    9: [(0, 4, 5), (0, 5, 1)],
    6: [(0, 1, 5), (0, 5, 4)],
    10: [(0, 2, 5), (0, 5, 3)],
    12: [(1, 2, 4), (1, 4, 3)],
    7: [(2, 4, 5)],
    11: [(1, 3, 5)],
    13: [(0, 3, 4)],
    14: [(0, 1, 2)],
}


def stiffness_triplets(tets, face_vectors, volumes):
    """COO triplets of the P1 stiffness (cotangent Laplacian) matrix.

    Entry for vertices (i, j) of tet t is s_i . s_j / (9 V_t); emitted
    per tet, i-major then j (16 entries per tet).
    """
    nt = len(tets)
    g = np.einsum("tic,tjc->tij", face_vectors, face_vectors)
    g /= (9.0 * volumes)[:, None, None]
    rows = np.repeat(tets, 4, axis=1).reshape(nt, 4, 4)
    cols = np.tile(tets, (1, 4)).reshape(nt, 4, 4)
    return rows.ravel(), cols.ravel(), g.ravel()


def divergence(tets, face_vectors, vectors, n_vertices):
    """Integrated divergence D_i = (1/3) sum over incident tets of s_i . v."""
    dots = np.einsum("tkc,tc->tk", face_vectors, vectors) / 3.0
    return np.bincount(tets.ravel(), weights=dots.ravel(),
                       minlength=n_vertices).astype(np.float64)


def marching_tets(vertices, tets, values, iso):
    """Iso-surface extraction on a tet mesh with edge-welded vertices.

    Returns (points, triangles, source_tets).  Points are the crossed
    edges' interpolated positions ordered by (lo, hi) vertex-id key;
    triangle winding follows the case table (callers orient by the
    field gradient afterwards).
    """
    inside = values >= iso
    itet = inside[tets]
    mask = itet @ np.array([1, 2, 4, 8])
    tri_tet_chunks = []
    tri_edge_chunks = []
    sub_chunks = []
    for m, tris_m in MT_TABLE.items():
        sel = np.nonzero(mask == m)[0]
        if not len(sel):
            continue
        for sub, tri in enumerate(tris_m):
            tri_tet_chunks.append(sel)
            tri_edge_chunks.append(np.broadcast_to(np.array(tri, dtype=np.int64),
                                                   (len(sel), 3)))
            sub_chunks.append(np.full(len(sel), sub, dtype=np.int64))
    if not tri_tet_chunks:
        empty = np.empty((0, 3))
        return empty, np.empty((0, 3), dtype=np.int64), np.empty(0, dtype=np.int64)
    tri_tets = np.concatenate(tri_tet_chunks)
    tri_edges = np.concatenate(tri_edge_chunks)
    subs = np.concatenate(sub_chunks)
    order = np.lexsort((subs, tri_tets))
    tri_tets = tri_tets[order]
    tri_edges = tri_edges[order]

    ea = tets[tri_tets[:, None], EDGE_LOCAL[tri_edges, 0]]
    eb = tets[tri_tets[:, None], EDGE_LOCAL[tri_edges, 1]]
    lo = np.minimum(ea, eb)
    hi = np.maximum(ea, eb)
    keys = lo.astype(np.int64) * np.int64(len(vertices)) + hi
    uniq, inverse = np.unique(keys, return_inverse=True)
    ulo = (uniq // len(vertices)).astype(np.int64)
    uhi = (uniq % len(vertices)).astype(np.int64)
    t = (iso - values[ulo]) / (values[uhi] - values[ulo])
    points = vertices[ulo] + t[:, None] * (vertices[uhi] - vertices[ulo])
    triangles = inverse.reshape(-1, 3)
    return points, triangles, tri_tets
