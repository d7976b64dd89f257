"""Peeling-layer extraction, validity checks and export.

A layer is an iso-surface of the peeling scalar.  Stations are placed
uniformly in the interior of the scalar's range (never at the extremes,
where the surface degenerates to a point or the whole boundary), at a
count chosen so consecutive layers stay within the requested cutting
depth.  Machining removes high-value layers first; the part sits at the
minimum.
"""

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import kernels
from .diffops import ScalarField, gradient
from .errors import ConstantField, EmptyMesh, IsoValueOutOfRange, ParseError
from .geometry import (closest_point_distances, open_boundary_edges,
                       point_segment_distances, ray_triangle_hits,
                       sample_surface, triangle_areas)
from .tetmesh import BoundaryTag


@dataclass
class IsoSurface:
    """Triangulated level set {g = value}, oriented along increasing g."""
    value: float
    points: np.ndarray
    triangles: np.ndarray
    source_tets: np.ndarray

    @property
    def n_points(self):
        return len(self.points)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def is_empty(self):
        return len(self.triangles) == 0

    def area(self):
        if self.is_empty:
            return 0.0
        return float(triangle_areas(self.points, self.triangles).sum())


def extract_isosurface(mesh, scalar, value):
    """Marching-tets extraction of {g = value}.

    Vertices exactly at the iso value are nudged up by 1e-9 of the range
    so the in/out classification never sees a tie; triangle winding is
    then fixed so normals point toward increasing g (away from the part).
    """
    g = scalar.values if isinstance(scalar, ScalarField) else np.asarray(scalar)
    lo, hi = float(g.min()), float(g.max())
    if not lo < value < hi:
        raise IsoValueOutOfRange(f"iso value {value} outside ({lo}, {hi})")
    vals = g
    ties = vals == value
    if ties.any():
        vals = vals.copy()
        vals[ties] += 1e-9 * (hi - lo)
    pts, tris, src = kernels.marching_tets(mesh.vertices, mesh.tets, vals, value)
    if len(tris):
        grad = gradient(mesh, g).vectors[src]
        p = pts[tris]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        wrong = np.einsum("ij,ij->i", n, grad) < 0.0
        tris = tris.copy()
        tris[wrong] = tris[wrong][:, [0, 2, 1]]
    return IsoSurface(float(value), pts, tris, src)


# -- stations and layer sets -----------------------------------------------

def layer_stations(lo, hi, depth=None, layer_count=None):
    """Uniform interior stations over (lo, hi).

    The count is ceil(range / depth) unless given explicitly; stations
    split the clipped range (0.1% margin at both ends) into count + 1
    equal gaps, so the spacing never exceeds the cutting depth and no
    station sits on an extreme value.
    """
    lo, hi = float(lo), float(hi)
    raw = hi - lo
    if raw <= 0.0:
        raise ConstantField("scalar range is empty")
    if layer_count is None:
        if depth is None:
            raise ValueError("need depth or layer_count")
        if depth <= 0.0:
            raise ValueError("depth must be positive")
        layer_count = max(1, math.ceil(raw / depth))
    layer_count = int(layer_count)
    if layer_count < 1:
        raise ValueError("layer_count must be at least 1")
    delta = 1e-3 * raw
    a, b = lo + delta, hi - delta
    k = np.arange(1, layer_count + 1, dtype=np.float64)
    return a + k * (b - a) / (layer_count + 1)


@dataclass
class Layer:
    value: float
    surfaces: list               # one IsoSurface, or several after correction
    corrected: bool = False
    spacing: dict = None         # stats of the gap to the next-lower layer

    def area(self):
        return float(sum(s.area() for s in self.surfaces))


@dataclass
class LayerSet:
    values: list                 # ascending stations
    layers: list                 # same order as values
    depth: float = None
    spacing: dict = None         # pooled over every gap sample

    def __len__(self):
        return len(self.layers)

    def machining_order(self):
        """Indices in removal order: highest scalar value first."""
        return list(np.argsort(self.values)[::-1])

    def total_area(self):
        return float(sum(l.area() for l in self.layers))

    def spacing_stats(self):
        """Overall and per-layer gap statistics (None if single layer)."""
        return {"overall": self.spacing,
                "per_layer": [l.spacing for l in self.layers]}


def _merged(surfaces):
    """Concatenate surface pieces into one (points, triangles) pair."""
    if len(surfaces) == 1:
        return surfaces[0].points, surfaces[0].triangles
    pts, tris, off = [], [], 0
    for s in surfaces:
        pts.append(s.points)
        tris.append(s.triangles + off)
        off += len(s.points)
    return np.concatenate(pts), np.concatenate(tris)


def generate_layer_set(mesh, scalar, depth=None, layer_count=None,
                       corrections=None, spacing_samples=200, seed=0,
                       stations=None):
    """Extract the full stack of peeling layers from a scalar field.

    ``corrections`` maps a station value to the list of replacement
    surfaces produced by a singular-sheet correction; matched stations
    use those instead of a plain extraction (pass ``stations`` when the
    corrections were computed against precomputed values, so the keys
    match bit for bit).  Spacing statistics come from
    ``spacing_samples`` seeded surface samples per layer, measured to
    the next-lower layer.
    """
    g = scalar.values if isinstance(scalar, ScalarField) else np.asarray(scalar)
    lo, hi = float(g.min()), float(g.max())
    if hi - lo <= 1e-12 * max(1.0, abs(lo), abs(hi)):
        raise ConstantField("scalar field is (numerically) constant")
    if stations is None:
        stations = layer_stations(lo, hi, depth=depth, layer_count=layer_count)
    corrections = corrections or {}
    layers = []
    for c in stations:
        repl = corrections.get(float(c))
        if repl:
            layers.append(Layer(float(c), list(repl), corrected=True))
        else:
            layers.append(Layer(float(c), [extract_isosurface(mesh, g, float(c))]))

    rng = np.random.default_rng(seed)
    gaps = []
    for k in range(len(layers) - 1, 0, -1):
        upper, lower = layers[k], layers[k - 1]
        pa, ta = _merged(upper.surfaces)
        pb, tb = _merged(lower.surfaces)
        if not len(ta) or not len(tb):
            continue
        samples = sample_surface(pa, ta, spacing_samples, rng)
        d = closest_point_distances(samples, pb, tb)
        # Samples whose nearest point lands on the lower surface's open rim
        # measure the distance to a clip line, not a true layer gap, and
        # would poison the statistics near the domain boundary.  The rim is
        # a subset of the surface, so such samples are exactly the ones
        # where the two distances coincide.
        rim = open_boundary_edges(tb)
        if len(rim):
            d_rim = point_segment_distances(samples, pb[rim[:, 0]], pb[rim[:, 1]])
            keep = d_rim > d * (1.0 + 1e-9) + 1e-12
            if keep.any():
                d = d[keep]
        upper.spacing = {"mean": float(d.mean()), "std": float(d.std()),
                         "min": float(d.min()), "max": float(d.max()),
                         "n_samples": int(len(d))}
        gaps.append(d)
    overall = None
    if gaps:
        d = np.concatenate(gaps)
        overall = {"mean": float(d.mean()), "std": float(d.std()),
                   "min": float(d.min()), "max": float(d.max()),
                   "n_samples": int(len(d))}
    return LayerSet(values=[float(c) for c in stations], layers=layers,
                    depth=depth, spacing=overall)


# -- validity --------------------------------------------------------------

@dataclass
class FloatingViolation:
    """A connected blob of remaining material with no part attachment."""
    value: float
    tets: np.ndarray
    volume: float


def _region_components(mesh, g, value):
    """Components of {tets with all vertex values >= value}."""
    region = np.nonzero((g[mesh.tets] >= value).all(axis=1))[0]
    if not len(region):
        return region, 0, np.empty(0, dtype=np.int64)
    local = np.full(mesh.n_tets, -1, dtype=np.int64)
    local[region] = np.arange(len(region))
    t_idx, f_idx = np.nonzero(mesh.neighbors[region] >= 0)
    nb = mesh.neighbors[region[t_idx], f_idx]
    keep = local[nb] >= 0
    graph = sp.coo_matrix((np.ones(keep.sum()), (t_idx[keep], local[nb[keep]])),
                          shape=(len(region), len(region)))
    n_comp, labels = connected_components(graph, directed=False)
    return region, n_comp, labels


def floating_volume_check(mesh, scalar, iso_values):
    """Floating-volume violations of {g >= c} for each station c.

    The remaining-material region is taken on whole tets (all four
    vertex values at or above the station); a connected component with
    no tet touching a PART boundary face is a violation -- nothing
    holds it once its surroundings are cut.  Callers whose remaining
    material is the *low* side of the field should negate both the
    scalar and the stations.

    Returns the flat list of violations over all stations (empty means
    every station is safe).
    """
    g = scalar.values if isinstance(scalar, ScalarField) else np.asarray(scalar)
    part_faces = mesh.faces_with_tag(BoundaryTag.PART)
    anchored = np.zeros(mesh.n_tets, dtype=bool)
    anchored[mesh.boundary_faces[part_faces, 0]] = True
    vols = mesh.volumes

    out = []
    for value in np.atleast_1d(np.asarray(iso_values, dtype=np.float64)):
        region, n_comp, labels = _region_components(mesh, g, value)
        for c in range(n_comp):
            tets = region[labels == c]
            if not anchored[tets].any():
                out.append(FloatingViolation(float(value), tets,
                                             float(vols[tets].sum())))
    return out


# -- depth variation -------------------------------------------------------

@dataclass
class DepthVariationReport:
    """Cutting depth left for finishing: final layer against the part.

    ``max_depth`` is the worst depth anywhere; ``avg_variation`` is the
    mean absolute successive depth change walking along contour bands
    of the part (the successive-band reading of "variation" -- stated
    here because the notion is ambiguous).  ``n_fallback`` counts
    samples whose normal ray missed the layer and fell back to the
    closest-point distance.
    """
    max_depth: float
    mean_depth: float
    avg_variation: float
    hist_counts: list
    hist_edges: list
    n_samples: int
    n_fallback: int
    band_count: int


def _surface_pair(surface):
    if isinstance(surface, IsoSurface):
        return surface.points, surface.triangles
    pts, tris = surface
    return (np.asarray(pts, dtype=np.float64), np.asarray(tris, dtype=np.int64))


def _barycentric_values(points, tris, which, samples, vertex_values):
    """Interpolate per-vertex values at sampled surface points."""
    a = points[tris[which, 0]]
    e1 = points[tris[which, 1]] - a
    e2 = points[tris[which, 2]] - a
    d = samples - a
    g11 = np.einsum("ij,ij->i", e1, e1)
    g12 = np.einsum("ij,ij->i", e1, e2)
    g22 = np.einsum("ij,ij->i", e2, e2)
    b1 = np.einsum("ij,ij->i", d, e1)
    b2 = np.einsum("ij,ij->i", d, e2)
    det = np.maximum(g11 * g22 - g12 * g12, 1e-300)
    u = (g22 * b1 - g12 * b2) / det
    v = (g11 * b2 - g12 * b1) / det
    w = np.clip(np.column_stack([1.0 - u - v, u, v]), 0.0, 1.0)
    vals = vertex_values[tris[which]]
    return (w * vals).sum(axis=1) / w.sum(axis=1)


def depth_variation(final_layer, part_surface, sample_count=10000, bins=32,
                    bands=16, band_values=None, seed=42):
    """How much material the final layer leaves over the part.

    Samples the part surface uniformly by area; each sample's depth is
    the distance to the final layer along the sample's surface normal
    (either direction -- orientation conventions differ per scene),
    falling back to the closest-point distance when the ray misses.
    Reports a histogram, the max, and the mean absolute successive
    variation along contour bands: samples are grouped into ``bands``
    by ``band_values`` (per part vertex, typically the peeling scalar;
    principal-axis position when omitted) and ordered by angle around
    each band's centroid.

    ``final_layer`` is an IsoSurface or (points, triangles);
    ``part_surface`` a (points, triangles) pair.
    """
    lp, lt = _surface_pair(final_layer)
    pp, pt = _surface_pair(part_surface)
    if not len(lt) or not len(pt):
        raise EmptyMesh("depth variation needs a non-empty layer and part")
    rng = np.random.default_rng(seed)
    samples, which = sample_surface(pp, pt, sample_count, rng, return_index=True)
    tp = pp[pt[which]]
    normals = np.cross(tp[:, 1] - tp[:, 0], tp[:, 2] - tp[:, 0])
    norms = np.linalg.norm(normals, axis=1)
    normals[norms > 0] /= norms[norms > 0, None]

    closest = closest_point_distances(samples, lp, lt)
    scale = max(np.ptp(pp, axis=0).max(), np.ptp(lp, axis=0).max(), 1e-30)
    depths = np.empty(sample_count)
    n_fallback = 0
    for i in range(sample_count):
        if closest[i] < 1e-12 * scale:         # coincident surfaces
            depths[i] = closest[i]
            continue
        best = np.inf
        for sign in (-1.0, 1.0):
            hits = ray_triangle_hits(samples[i], sign * normals[i], lp, lt)
            if len(hits):
                best = min(best, hits[0])
        if np.isfinite(best):
            depths[i] = best
        else:
            depths[i] = closest[i]
            n_fallback += 1

    if band_values is not None:
        proj = _barycentric_values(pp, pt, which, samples,
                                   np.asarray(band_values, dtype=np.float64))
    else:
        centered = samples - samples.mean(axis=0)
        _, vecs = np.linalg.eigh(centered.T @ centered)
        proj = centered @ vecs[:, -1]
    edges = np.linspace(proj.min(), proj.max(), bands + 1)
    edges[-1] += 1e-12 * max(abs(edges[-1]), 1.0)
    slot = np.clip(np.searchsorted(edges, proj, side="right") - 1, 0, bands - 1)

    variations = []
    for b in range(bands):
        members = np.nonzero(slot == b)[0]
        if len(members) < 2:
            continue
        pts = samples[members]
        center = pts.mean(axis=0)
        axis = normals[members].mean(axis=0)
        if np.linalg.norm(axis) < 1e-12:
            axis = np.array([0.0, 0.0, 1.0])
        axis = axis / np.linalg.norm(axis)
        ref = np.array([1.0, 0.0, 0.0])
        if abs(ref @ axis) > 0.9:
            ref = np.array([0.0, 1.0, 0.0])
        u = np.cross(axis, ref)
        u /= np.linalg.norm(u)
        w = np.cross(axis, u)
        rel = pts - center
        order = members[np.argsort(np.arctan2(rel @ w, rel @ u))]
        d = depths[order]
        variations.append(np.abs(np.diff(d)).mean())

    counts, hedges = np.histogram(depths, bins=bins)
    return DepthVariationReport(
        max_depth=float(depths.max()),
        mean_depth=float(depths.mean()),
        avg_variation=float(np.mean(variations)) if variations else 0.0,
        hist_counts=counts.tolist(), hist_edges=hedges.tolist(),
        n_samples=int(sample_count), n_fallback=int(n_fallback),
        band_count=len(variations))


# -- export ----------------------------------------------------------------

def _write_obj(path, layer):
    with open(path, "w") as fh:
        fh.write("# volpeel layer export\n")
        off = 1
        for k, s in enumerate(layer.surfaces):
            fh.write(f"o piece_{k}\n")
            for x, y, z in s.points.tolist():
                fh.write(f"v {x!r} {y!r} {z!r}\n")
            for a, b, c in (s.triangles + off).tolist():
                fh.write(f"f {a} {b} {c}\n")
            off += len(s.points)


def _write_stl(path, layer):
    with open(path, "w") as fh:
        for k, s in enumerate(layer.surfaces):
            fh.write(f"solid piece_{k}\n")
            p = s.points[s.triangles]
            n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
            l = np.linalg.norm(n, axis=1)
            n[l > 0] /= l[l > 0, None]
            for tri, nrm in zip(p.tolist(), n.tolist()):
                fh.write(f"facet normal {nrm[0]!r} {nrm[1]!r} {nrm[2]!r}\n")
                fh.write("outer loop\n")
                for x, y, z in tri:
                    fh.write(f"vertex {x!r} {y!r} {z!r}\n")
                fh.write("endloop\nendfacet\n")
            fh.write(f"endsolid piece_{k}\n")


def export_layers(layer_set, directory, fmt="obj"):
    """Write one file per layer (machining order) plus manifest.json.

    Returns the manifest dict.  Coordinates are written with repr
    precision, so a re-export of the same plan is byte-identical.
    """
    fmt = fmt.lower()
    if fmt not in ("obj", "stl"):
        raise ValueError(f"unsupported export format {fmt!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not len(layer_set):
        warnings.warn("exporting an empty layer set: manifest only")
    writer = _write_obj if fmt == "obj" else _write_stl
    entries = []
    for i, idx in enumerate(layer_set.machining_order()):
        layer = layer_set.layers[idx]
        name = f"layer_{i:03d}.{fmt}"
        writer(directory / name, layer)
        entries.append({"index": i, "file": name, "value": layer.value,
                        "pieces": len(layer.surfaces),
                        "n_points": int(sum(s.n_points for s in layer.surfaces)),
                        "n_triangles": int(sum(s.n_triangles for s in layer.surfaces)),
                        "area": layer.area(), "corrected": layer.corrected,
                        "spacing": layer.spacing})
    manifest = {"format": fmt, "depth": layer_set.depth,
                "n_layers": len(layer_set), "spacing": layer_set.spacing,
                "layers": entries}
    if not entries:
        manifest["warnings"] = ["empty layer set"]
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_obj(path):
    """(points, triangles) from a (possibly multi-object) OBJ file."""
    pts, tris = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                pts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:4]]
                tris.append([i - 1 for i in idx])
    if not pts:
        raise ParseError(f"no vertices in {path}")
    return np.array(pts), np.array(tris, dtype=np.int64)


def load_stl(path):
    """(points, triangles) from an ASCII STL file, exact-deduplicated."""
    pts, tris, index = [], [], {}
    tri = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if parts and parts[0] == "vertex":
                p = (float(parts[1]), float(parts[2]), float(parts[3]))
                if p not in index:
                    index[p] = len(pts)
                    pts.append(p)
                tri.append(index[p])
                if len(tri) == 3:
                    tris.append(tri)
                    tri = []
    if not pts:
        raise ParseError(f"no facets in {path}")
    return np.array(pts), np.array(tris, dtype=np.int64)
