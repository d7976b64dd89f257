"""Point/triangle geometry shared by tagging, spacing and depth metrics."""

import numpy as np
from scipy.spatial import cKDTree


def triangle_areas(vertices, triangles):
    p = vertices[triangles]
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def point_triangle_distance(p, a, b, c):
    """Exact distance from a point to a triangle (Ericson's region test)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return float(np.linalg.norm(p - a))
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return float(np.linalg.norm(p - b))
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3) if d1 != d3 else 0.0   # duplicate corner: sliver
        return float(np.linalg.norm(p - (a + v * ab)))
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return float(np.linalg.norm(p - c))
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6) if d2 != d6 else 0.0
        return float(np.linalg.norm(p - (a + w * ac)))
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        den = (d4 - d3) + (d5 - d6)
        w = (d4 - d3) / den if den > 0.0 else 0.0
        return float(np.linalg.norm(p - (b + w * (c - b))))
    total = va + vb + vc
    if total == 0.0:                               # fully degenerate triangle
        return float(np.linalg.norm(p - a))
    v = vb / total
    w = vc / total
    return float(np.linalg.norm(p - (a + v * ab + w * ac)))


def closest_point_distances(points, surf_vertices, surf_triangles, n_candidates=12):
    """Distance from each point to a triangle surface.

    Candidate triangles come from a KD-tree over triangle centroids; the
    exact point-triangle distance is then minimized over candidates plus
    a safety margin re-query when the centroid bound is not conclusive.
    """
    points = np.atleast_2d(points)
    tri = surf_vertices[surf_triangles]
    centroids = tri.mean(axis=1)
    # circumradius-ish bound: max vertex distance from centroid
    spread = np.linalg.norm(tri - centroids[:, None, :], axis=2).max(axis=1)
    tree = cKDTree(centroids)
    k = min(n_candidates, len(centroids))
    dc, idx = tree.query(points, k=k)
    dc = np.atleast_2d(dc)
    idx = np.atleast_2d(idx)
    out = np.empty(len(points))
    for i, p in enumerate(points):
        best = np.inf
        for j in idx[i]:
            a, b, c = tri[j]
            d = point_triangle_distance(p, a, b, c)
            if d < best:
                best = d
        # any centroid within best + its spread could still beat us
        extra = tree.query_ball_point(p, best + spread.max())
        for j in extra:
            if j in idx[i]:
                continue
            a, b, c = tri[j]
            d = point_triangle_distance(p, a, b, c)
            if d < best:
                best = d
        out[i] = best
    return out


def open_boundary_edges(triangles):
    """Vertex index pairs of edges used by exactly one triangle."""
    t = np.asarray(triangles)
    if not len(t):
        return np.empty((0, 2), dtype=np.int64)
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq[counts == 1]


def point_segment_distances(points, seg_a, seg_b):
    """Min distance from each point to a bundle of segments."""
    points = np.atleast_2d(points)
    seg_a = np.atleast_2d(seg_a)
    seg_b = np.atleast_2d(seg_b)
    ab = seg_b - seg_a                                    # (m, 3)
    ab2 = np.einsum("ij,ij->i", ab, ab)
    ab2 = np.where(ab2 > 0.0, ab2, 1.0)                   # guard zero-length
    ap = points[:, None, :] - seg_a[None, :, :]           # (n, m, 3)
    t = np.clip(np.einsum("nmj,mj->nm", ap, ab) / ab2, 0.0, 1.0)
    foot = seg_a[None, :, :] + t[..., None] * ab[None, :, :]
    return np.linalg.norm(points[:, None, :] - foot, axis=2).min(axis=1)


def ray_triangle_hits(origin, direction, vertices, triangles, eps=1e-12):
    """Parametric hit distances of a ray against a triangle soup.

    Moller-Trumbore; returns sorted positive t values (may be empty).
    """
    origin = np.asarray(origin, float)
    direction = np.asarray(direction, float)
    p = vertices[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    h = np.cross(direction, e2)
    a = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(a) > eps
    f = np.zeros_like(a)
    f[ok] = 1.0 / a[ok]
    s = origin - p[:, 0]
    u = f * np.einsum("ij,ij->i", s, h)
    q = np.cross(s, e1)
    v = f * (q @ direction)
    t = f * np.einsum("ij,ij->i", q, e2)
    hit = ok & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) & (t > eps)
    return np.sort(t[hit])


def sample_surface(vertices, triangles, n, rng, return_index=False):
    """Area-weighted uniform samples on a triangle surface."""
    areas = triangle_areas(vertices, triangles)
    total = areas.sum()
    if total <= 0:
        raise ValueError("surface has zero area")
    which = rng.choice(len(triangles), size=n, p=areas / total)
    r1 = rng.random(n)
    r2 = rng.random(n)
    sq = np.sqrt(r1)
    u = 1.0 - sq
    v = sq * (1.0 - r2)
    w = sq * r2
    p = vertices[triangles[which]]
    pts = u[:, None] * p[:, 0] + v[:, None] * p[:, 1] + w[:, None] * p[:, 2]
    return (pts, which) if return_index else pts
