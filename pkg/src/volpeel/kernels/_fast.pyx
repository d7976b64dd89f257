# cython: boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled versions of the hot kernels.

Must match _pure exactly: same triplet emission order for the
stiffness assembly, same accumulation order for the divergence, same
welded-point and triangle ordering for marching tetrahedra.  The tests
hold both backends to that contract.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "fast"

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

# flattened case tables for the C loop
_case_count = np.zeros(16, dtype=np.int64)
_case_edges = np.full((16, 2, 3), -1, dtype=np.int64)
for _m, _tris in MT_TABLE.items():
    _case_count[_m] = len(_tris)
    for _i, _tri in enumerate(_tris):
        _case_edges[_m, _i] = _tri

cdef cnp.int64_t[::1] CASE_COUNT = _case_count
cdef cnp.int64_t[:, :, ::1] CASE_EDGES = _case_edges
cdef cnp.int64_t[:, ::1] EDGES = EDGE_LOCAL


def stiffness_triplets(tets, face_vectors, volumes):
    """COO triplets of the P1 stiffness (cotangent Laplacian) matrix.

    Entry for vertices (i, j) of tet t is s_i . s_j / (9 V_t); emitted
    per tet, i-major then j (16 entries per tet).
    """
    cdef const cnp.int64_t[:, ::1] T = tets
    cdef const double[:, :, ::1] S = face_vectors
    cdef const double[::1] V = volumes
    cdef Py_ssize_t nt = T.shape[0]
    rows_arr = np.empty(nt * 16, dtype=np.int64)
    cols_arr = np.empty(nt * 16, dtype=np.int64)
    vals_arr = np.empty(nt * 16, dtype=np.float64)
    cdef cnp.int64_t[::1] rows = rows_arr
    cdef cnp.int64_t[::1] cols = cols_arr
    cdef double[::1] vals = vals_arr
    cdef Py_ssize_t t, i, j, p = 0
    cdef double nine_v, dot
    for t in range(nt):
        nine_v = 9.0 * V[t]
        for i in range(4):
            for j in range(4):
                dot = (S[t, i, 0] * S[t, j, 0] + S[t, i, 1] * S[t, j, 1]
                       + S[t, i, 2] * S[t, j, 2])
                rows[p] = T[t, i]
                cols[p] = T[t, j]
                vals[p] = dot / nine_v
                p += 1
    return rows_arr, cols_arr, vals_arr


def divergence(tets, face_vectors, vectors, n_vertices):
    """Integrated divergence D_i = (1/3) sum over incident tets of s_i . v."""
    cdef const cnp.int64_t[:, ::1] T = tets
    cdef const double[:, :, ::1] S = face_vectors
    cdef const double[:, ::1] W = vectors
    cdef Py_ssize_t nt = T.shape[0]
    out_arr = np.zeros(int(n_vertices), dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t t, k
    for t in range(nt):
        for k in range(4):
            out[T[t, k]] += (S[t, k, 0] * W[t, 0] + S[t, k, 1] * W[t, 1]
                             + S[t, k, 2] * W[t, 2]) / 3.0
    return out_arr


def marching_tets(vertices, tets, values, iso):
    """Iso-surface extraction on a tet mesh with edge-welded vertices.

    Returns (points, triangles, source_tets).  Points are the crossed
    edges' interpolated positions ordered by (lo, hi) vertex-id key;
    triangle winding follows the case table (callers orient by the
    field gradient afterwards).
    """
    cdef const cnp.int64_t[:, ::1] T = tets
    cdef const double[::1] vals = np.ascontiguousarray(values, dtype=np.float64)
    cdef double c = iso
    cdef Py_ssize_t nt = T.shape[0]
    cdef Py_ssize_t t, k, s, e, total = 0
    cdef int mask

    for t in range(nt):
        mask = 0
        for k in range(4):
            if vals[T[t, k]] >= c:
                mask |= 1 << k
        total += CASE_COUNT[mask]

    if total == 0:
        return (np.empty((0, 3)), np.empty((0, 3), dtype=np.int64),
                np.empty(0, dtype=np.int64))

    tri_tets_arr = np.empty(total, dtype=np.int64)
    tri_edges_arr = np.empty((total, 3), dtype=np.int64)
    cdef cnp.int64_t[::1] tri_tets = tri_tets_arr
    cdef cnp.int64_t[:, ::1] tri_edges = tri_edges_arr
    cdef Py_ssize_t p = 0
    for t in range(nt):                       # (tet, sub-triangle) order
        mask = 0
        for k in range(4):
            if vals[T[t, k]] >= c:
                mask |= 1 << k
        for s in range(CASE_COUNT[mask]):
            tri_tets[p] = t
            for e in range(3):
                tri_edges[p, e] = CASE_EDGES[mask, s, e]
            p += 1

    # weld on (lo, hi) edge keys -- same numpy path as the pure backend
    tets_np = np.asarray(tets)
    ea = tets_np[tri_tets_arr[:, None], EDGE_LOCAL[tri_edges_arr, 0]]
    eb = tets_np[tri_tets_arr[:, None], EDGE_LOCAL[tri_edges_arr, 1]]
    lo = np.minimum(ea, eb)
    hi = np.maximum(ea, eb)
    keys = lo.astype(np.int64) * np.int64(len(vertices)) + hi
    uniq, inverse = np.unique(keys, return_inverse=True)
    ulo = (uniq // len(vertices)).astype(np.int64)
    uhi = (uniq % len(vertices)).astype(np.int64)
    values_np = np.asarray(values)
    vertices_np = np.asarray(vertices)
    tv = (iso - values_np[ulo]) / (values_np[uhi] - values_np[ulo])
    points = vertices_np[ulo] + tv[:, None] * (vertices_np[uhi] - vertices_np[ulo])
    triangles = inverse.reshape(-1, 3)
    return points, triangles, tri_tets_arr
