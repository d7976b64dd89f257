"""Detection, classification and repair of field singularities.

A peeling field can fail in four ways:

* **Type I** -- an interior vertex is a strict local extremum of the
  scalar field.  Layers collapse onto a point there.  Repaired by
  critically re-anchoring the vertex's incident tets along a
  user-supplied escape direction and re-solving.
* **Type II** -- an interior sink sheet created by seeding a source on
  both sides of the material.  Prevented by construction (one-sided
  seeding); when it does appear it is detected like any other sheet.
* **Type III** -- a singular sheet whose rim lies entirely on the part
  surface.  Admissible: layers crossing it are repaired by a local
  correction that never changes the scalar outside a small ring.
* **Type IV** -- any other sheet (rim touching stock, or a closed sheet
  with no rim at all).  Not machinable by peeling; reported.

Sheets are detected as connected components (edge adjacency) of
interior faces whose two incident tets carry conflicting vectors,
meaning the angle between them exceeds 90 degrees.
"""

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .diffops import (NATURAL, ScalarField, VectorField,
                      integrated_divergence, _laplacian_csr, solve_poisson)
from .errors import (InadmissibleBoundary, NonManifoldSource,
                     RingTouchesDomainBoundary, SolverFailure,
                     UnorientedSource, UnresolvedSingularities,
                     ZeroGradientTet)
from .fieldopt import DEFAULT_CONFIG, AnchorSet
from .tetmesh import FACE_LOCAL, BoundaryTag


class PlateauWarning(UserWarning):
    """A vertex ties its one-ring extreme value; extremum test is ambiguous."""


DIRECTIVE_ACTIONS = ("ADD_ANCHOR", "LOCAL_CORRECTION", "REORIENT_SOURCE")


# -- results ---------------------------------------------------------------

@dataclass
class PointSingularity:
    vertex: int
    kind: str                    # "MIN" | "MAX"
    value: float
    interior: bool = True


@dataclass
class SingularBoundary:
    """A connected sheet of conflicted interior faces.

    ``faces`` holds (tet, local_face) rows seen from the lower-indexed
    tet of each pair; ``rim_edges`` are the sheet's boundary edges as
    sorted vertex pairs.  A sheet with a rim entirely on part-surface
    edges is admissible (Type III); anything else, including a closed
    sheet with no rim, is Type IV.
    """
    faces: np.ndarray
    vertices: np.ndarray
    rim_edges: list
    admissible: bool
    kind: str                    # "type3" | "type4"

    @property
    def n_faces(self):
        return len(self.faces)


@dataclass
class ResolutionDirective:
    """One user decision feeding the classification loop.

    ADD_ANCHOR clears a point singularity (target: vertex id, or None
    for the next one found) along ``anchor_direction``.  There is
    deliberately no automatic direction guess: which way the flow
    should escape is a machining decision, not a geometric one.
    LOCAL_CORRECTION approves repairing admissible sheets at layering
    time; REORIENT_SOURCE asks the planner to re-run source seeding.
    """
    action: str
    target: object = None
    anchor_direction: object = None
    note: str = ""
    consumed: bool = False

    def __post_init__(self):
        if self.action not in DIRECTIVE_ACTIONS:
            raise ValueError(f"unknown directive action {self.action!r}")
        if self.action == "ADD_ANCHOR":
            if self.anchor_direction is None:
                raise ValueError("ADD_ANCHOR directive needs anchor_direction")
            self.anchor_direction = np.asarray(self.anchor_direction,
                                               dtype=np.float64)

    def matches(self, sing):
        if self.action != "ADD_ANCHOR":
            return False
        if self.target is None:
            return True                # wildcard: reusable until clean
        if self.consumed:
            return False
        if isinstance(self.target, PointSingularity):
            return self.target.vertex == sing.vertex
        return int(self.target) == sing.vertex

    def to_dict(self):
        target = self.target
        if isinstance(target, PointSingularity):
            target = target.vertex
        direction = self.anchor_direction
        return {"action": self.action,
                "target": int(target) if target is not None else None,
                "anchor_direction": (None if direction is None
                                     else [float(x) for x in direction]),
                "note": self.note}


@dataclass
class SingularityReport:
    rounds: int
    point_singularities: list    # interior, off-sheet extrema that remain
    all_extrema: list            # every strict extremum, boundary included
    singular_boundaries: list
    resolved_points: int
    directives: list = dc_field(default_factory=list)
    anchors: object = None
    clean: bool = False

    def summary(self):
        kinds = [s.kind for s in self.singular_boundaries]
        return {"rounds": self.rounds,
                "points_remaining": len(self.point_singularities),
                "points_resolved": self.resolved_points,
                "sheets_type3": kinds.count("type3"),
                "sheets_type4": kinds.count("type4"),
                "clean": self.clean}


def _values(g):
    return g.values if isinstance(g, ScalarField) else np.asarray(g, dtype=np.float64)


# -- point singularities (Type I) ------------------------------------------

def detect_point_singularities(mesh, g):
    """Strict one-ring extrema of g, with an interior/boundary flag.

    Every vertex strictly above (below) its whole one-ring is reported;
    only the interior ones violate the peeling condition, so callers
    usually filter on ``interior``.  An interior vertex that merely ties
    its ring extreme raises a PlateauWarning instead of being reported,
    since an exact plateau makes the strict test meaningless.  Boundary
    ties are routine (flat facets) and stay silent.
    """
    g = _values(g)
    offsets, nbrs = mesh.vertex_neighbors
    deg = np.diff(offsets)
    ring_max = np.full(mesh.n_vertices, -np.inf)
    ring_min = np.full(mesh.n_vertices, np.inf)
    has = deg > 0
    gn = g[nbrs]
    ring_max[has] = np.maximum.reduceat(gn, offsets[:-1])[has]
    ring_min[has] = np.minimum.reduceat(gn, offsets[:-1])[has]

    boundary = mesh.boundary_vertex_mask
    is_max = has & (g > ring_max)
    is_min = has & (g < ring_min)
    plateau = (has & ~boundary & ~is_max & ~is_min
               & ((g == ring_max) | (g == ring_min)))
    if plateau.any():
        vs = np.nonzero(plateau)[0]
        warnings.warn(f"{len(vs)} interior vertices tie their one-ring extreme "
                      f"(e.g. {vs[:8].tolist()}); plateau extrema are not reported",
                      PlateauWarning)

    out = []
    for v in np.nonzero(is_min | is_max)[0]:
        kind = "MAX" if is_max[v] else "MIN"
        out.append(PointSingularity(int(v), kind, float(g[v]),
                                    interior=not bool(boundary[v])))
    return out


def interior_extrema(points):
    return [p for p in points if p.interior]


def full_scan_extrema(mesh, g, interior_only=True):
    """Reference implementation of the strict-extremum scan.

    Same contract as detect_point_singularities, written as a plain
    per-vertex loop (and silent about plateaus).  Kept as an
    independently-coded cross-check for the vectorized detector.
    """
    g = _values(g)
    out = []
    for v in range(mesh.n_vertices):
        inter = not bool(mesh.boundary_vertex_mask[v])
        if interior_only and not inter:
            continue
        ring = g[mesh.neighbors_of_vertex(v)]
        if len(ring) == 0:
            continue
        if g[v] > ring.max():
            out.append(PointSingularity(v, "MAX", float(g[v]), interior=inter))
        elif g[v] < ring.min():
            out.append(PointSingularity(v, "MIN", float(g[v]), interior=inter))
    return out


# -- singular sheets (Type II/III/IV) --------------------------------------

def _face_edges(tri):
    a, b, c = int(tri[0]), int(tri[1]), int(tri[2])
    return ((min(a, b), max(a, b)), (min(b, c), max(b, c)),
            (min(a, c), max(a, c)))


def detect_singular_boundary(mesh, field, conflict_threshold=0.0):
    """Connected sheets of interior faces where the field conflicts.

    A face conflicts when its two incident tets' vectors disagree:
    v_t . v_u < conflict_threshold, so the default 0 flags any pair
    more than 90 degrees apart.  Faces are grouped into sheets by
    shared edges; each sheet's rim decides admissibility.
    """
    v = field.vectors if isinstance(field, VectorField) else np.asarray(field)
    nbr = mesh.neighbors
    t_idx, lf_idx = np.nonzero(nbr >= 0)
    u_idx = nbr[t_idx, lf_idx]
    keep = t_idx < u_idx                       # each interior face once
    t_idx, lf_idx, u_idx = t_idx[keep], lf_idx[keep], u_idx[keep]
    hit = np.einsum("ij,ij->i", v[t_idx], v[u_idx]) < conflict_threshold
    if not hit.any():
        return []
    faces = np.column_stack([t_idx[hit], lf_idx[hit]])
    tris = mesh.tets[faces[:, 0][:, None], FACE_LOCAL[faces[:, 1]]]

    # group by shared edges
    edge_faces = {}
    for f, tri in enumerate(tris):
        for e in _face_edges(tri):
            edge_faces.setdefault(e, []).append(f)
    rows, cols = [], []
    for members in edge_faces.values():
        for a, b in zip(members, members[1:]):
            rows.append(a)
            cols.append(b)
    nf = len(faces)
    graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(nf, nf))
    n_comp, labels = connected_components(graph, directed=False)

    part_edges = mesh.tagged_edge_set(BoundaryTag.PART)
    sheets = []
    for c in range(n_comp):
        members = np.nonzero(labels == c)[0]
        counts = {}
        for f in members:
            for e in _face_edges(tris[f]):
                counts[e] = counts.get(e, 0) + 1
        rim = sorted(e for e, k in counts.items() if k == 1)
        admissible = bool(rim) and all(e in part_edges for e in rim)
        sheets.append(SingularBoundary(
            faces=faces[members],
            vertices=np.unique(tris[members]),
            rim_edges=rim,
            admissible=admissible,
            kind="type3" if admissible else "type4"))
    sheets.sort(key=lambda sh: int(sh.faces[:, 0].min()))
    return sheets


# -- Type I resolution -----------------------------------------------------

def resolve_type1(mesh, field, anchors, sing, direction, cfg=DEFAULT_CONFIG):
    """Clear one interior extremum by critical re-anchoring.

    Every tet incident to the singular vertex gets a critical anchor
    along ``direction`` -- the escape route the user chose for the
    trapped flow -- and the field is re-solved.  Returns
    (field, anchors); the input anchor set is not mutated.
    """
    from .fieldopt import interpolate_field

    direction = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(direction)
    if norm < 1e-12:
        raise ZeroGradientTet(f"degenerate escape direction at vertex {sing.vertex}")
    direction = direction / norm
    out = anchors.copy() if anchors is not None else AnchorSet()
    for t in mesh.tets_of_vertex(sing.vertex):
        out.add_tet(int(t), direction, weight=cfg.beta_critical, critical=True)
    return interpolate_field(mesh, out, cfg), out


# -- source surface seeding ------------------------------------------------

def orient_source_surface(mesh, surf_vertices, surf_triangles, eps=None,
                          weight=None):
    """Anchor set from a source surface (typically the convex hull).

    Validates that the surface is manifold and consistently oriented,
    fixes the global sign so normals point away from the material, and
    drops one anchor per triangle into the tet under its centroid.
    Triangles coincident with the part surface (within ``eps``) are
    skipped -- the part is the sink, not a source -- as are triangles
    floating outside the material (hull facets bridging a concavity).

    One-sided seeding means no two face-adjacent anchors can oppose
    each other, which is what keeps Type II sheets out by construction.
    """
    from .geometry import closest_point_distances

    surf_vertices = np.asarray(surf_vertices, dtype=np.float64)
    surf_triangles = np.asarray(surf_triangles, dtype=np.int64)
    if eps is None:
        eps = 1e-4 * mesh.bbox_diagonal()

    # manifold + orientation checks on directed edges
    directed = {}
    for i, (a, b, c) in enumerate(surf_triangles):
        for u, w in ((a, b), (b, c), (c, a)):
            key = (min(u, w), max(u, w))
            directed.setdefault(key, []).append((u, w))
    closed = True
    for key, uses in directed.items():
        if len(uses) > 2:
            raise NonManifoldSource(f"surface edge {key} borders {len(uses)} triangles")
        if len(uses) == 2 and uses[0] == uses[1]:
            raise UnorientedSource(f"surface edge {key} traversed twice the same way")
        if len(uses) == 1:
            closed = False

    tri_pts = surf_vertices[surf_triangles]
    raw_n = 0.5 * np.cross(tri_pts[:, 1] - tri_pts[:, 0],
                           tri_pts[:, 2] - tri_pts[:, 0])
    if closed:
        # signed volume of the oriented surface; negative means inward
        signed = np.einsum("ij,ij->", np.cross(tri_pts[:, 0], tri_pts[:, 1]),
                           tri_pts[:, 2]) / 6.0
        if signed < 0.0:
            raw_n = -raw_n
    else:
        centers = tri_pts.mean(axis=1)
        mid = mesh.vertices.mean(axis=0)
        if np.einsum("ij,ij->", centers - mid, raw_n) < 0.0:
            raw_n = -raw_n
    areas = np.linalg.norm(raw_n, axis=1)
    if np.any(areas < 1e-15):
        raise UnorientedSource("surface has a zero-area triangle")
    normals = raw_n / areas[:, None]
    centers = tri_pts.mean(axis=1)

    part = mesh.faces_with_tag(BoundaryTag.PART)
    near_part = np.zeros(len(centers), dtype=bool)
    if len(part):
        tris = mesh.boundary_face_vertices(part)
        d = closest_point_distances(centers, mesh.vertices, tris)
        near_part = d <= eps

    anchors = AnchorSet()
    for i in np.argsort(-areas):               # big facets win tet collisions
        if near_part[i]:
            continue
        t = mesh.locate_point(centers[i])
        if t is None:
            # nudge inward off the surface; centroids of boundary-coincident
            # facets can fall just outside by roundoff
            t = mesh.locate_point(centers[i] - 1e-6 * mesh.bbox_diagonal() * normals[i])
        if t is None:
            continue                           # facet bridges a concavity
        anchors.add_tet(int(t), normals[i], weight=weight)
    if len(anchors) == 0:
        warnings.warn("source surface placed no anchors (entirely outside "
                      "the material or on the part surface)")
    return anchors


# -- Type III local correction ---------------------------------------------

def _sheet_sides(mesh, sheet):
    """Split the tets adjacent to a sheet into its two sides.

    Face normals are sign-aligned with the first face's normal, which
    is adequate for sheets that do not fold back on themselves.
    """
    t = sheet.faces[:, 0]
    lf = sheet.faces[:, 1]
    u = mesh.neighbors[t, lf]
    s = mesh.face_vectors[t, lf]
    n0 = s[0] / np.linalg.norm(s[0])
    flip = s @ n0 < 0.0
    side_a = np.where(~flip, t, u)
    side_b = np.where(~flip, u, t)
    side_a = np.unique(side_a)
    side_b = np.setdiff1d(np.unique(side_b), side_a)
    return side_a, side_b


def _flood_side(mesh, seeds, zone, blocked):
    """Face-BFS from one side's seeds, confined to the zone.

    Sheet faces are never crossed; for an admissible sheet the rim lies
    on the domain boundary, so the two sides cannot meet around it and
    the flood stays one-sided.
    """
    seen = dict.fromkeys(int(t) for t in seeds if int(t) in zone)
    frontier = list(seen)
    while frontier:
        nxt = []
        for t in frontier:
            for nb in mesh.neighbors[t]:
                nb = int(nb)
                if nb < 0 or nb in seen or nb not in zone:
                    continue
                if (min(t, nb), max(t, nb)) in blocked:
                    continue
                seen[nb] = None
                nxt.append(nb)
        frontier = nxt
    return np.array(sorted(seen), dtype=np.int64)


def _sheet_rings(mesh, sheet, side_a, side_b, blocked, depth):
    """The depth-ring of tets around the sheet, split into its sides.

    The zone is grown vertex-wise -- depth 1 means every tet touching a
    sheet vertex -- so each extra level adds roughly one element layer,
    which is the scale the local re-solve needs.
    """
    verts = set(int(v) for v in sheet.vertices)
    for _ in range(depth - 1):
        grown = set(verts)
        for v in verts:
            grown.update(int(u) for u in mesh.neighbors_of_vertex(v))
        verts = grown
    offsets, vt = mesh.vertex_tets
    zone = set()
    for v in verts:
        zone.update(int(t) for t in vt[offsets[v]:offsets[v + 1]])
    ring_a = _flood_side(mesh, side_a, zone, blocked)
    ring_b = _flood_side(mesh, side_b, zone, blocked)
    return ring_a, ring_b


def _touches_outer_boundary(mesh, tets):
    held = mesh.boundary_faces[:, 0]
    outer = mesh.boundary_tags != int(BoundaryTag.PART)
    return bool(np.isin(tets, held[outer]).any())


@dataclass
class CorrectionResult:
    ring_depth: int
    side_a: np.ndarray           # seed tets on each side of the sheet
    side_b: np.ndarray
    corrected_a: ScalarField     # scalar from the pass that pushed into side a
    corrected_b: ScalarField
    unknowns_a: np.ndarray
    unknowns_b: np.ndarray
    broken_values: list
    replacements: dict           # iso value -> [IsoSurface, IsoSurface]

    @property
    def surfaces(self):
        out = []
        for c in sorted(self.replacements):
            out.extend(self.replacements[c])
        return out


def _smooth_ring(mesh, vectors, ring, cfg):
    """Relax the flipped ring field, its boundary shell held fixed.

    The shell -- ring tets with a face neighbor outside the ring -- is
    pinned at its (already flipped) values, so smoothing only blends
    the interior of the ring.
    """
    rset = {int(t): i for i, t in enumerate(ring)}
    nr = len(ring)
    rows, cols, vals = [], [], []
    pin = np.zeros(nr, dtype=bool)
    for t, i in rset.items():
        inside = [int(nb) for nb in mesh.neighbors[t]
                  if nb >= 0 and int(nb) in rset]
        if any(nb >= 0 and int(nb) not in rset for nb in mesh.neighbors[t]):
            pin[i] = True
        if inside:
            rows.append(i)
            cols.append(i)
            vals.append(1.0)
            for nb in inside:
                rows.append(i)
                cols.append(rset[nb])
                vals.append(-1.0 / len(inside))
    L = sp.coo_matrix((vals, (rows, cols)), shape=(nr, nr)).tocsr()
    b2 = np.where(pin, cfg.beta_general ** 2, 0.0)
    A = (L.T @ L) + sp.diags(b2)
    rhs = b2[:, None] * vectors[ring]
    try:
        lu = splu(A.tocsc())
        out = np.column_stack([lu.solve(rhs[:, k]) for k in range(3)])
    except RuntimeError as exc:
        raise SolverFailure(f"ring smoothing failed: {exc}")
    norms = np.linalg.norm(out, axis=1)
    ok = norms > 1e-12
    out[ok] /= norms[ok, None]
    out[~ok] = vectors[ring[~ok]]              # keep the flipped input there
    return out


def _local_poisson(mesh, g, vectors, unknowns):
    """Re-solve g on ``unknowns`` only, all other vertices pinned.

    Vertices outside the unknown set keep their incoming values bit for
    bit; that is the locality guarantee of the whole correction.
    """
    K = _laplacian_csr(mesh)
    D = integrated_divergence(mesh, vectors)
    n = mesh.n_vertices
    pinned = np.setdiff1d(np.arange(n), unknowns)
    rhs = D[unknowns] - K[unknowns][:, pinned] @ g[pinned]
    try:
        x = splu(K[unknowns][:, unknowns].tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise SolverFailure(f"local correction solve failed: {exc}")
    if not np.all(np.isfinite(x)):
        raise SolverFailure("local correction produced non-finite values")
    out = g.copy()
    out[unknowns] = x
    return out


def _correction_pass(mesh, field, g, ring_flip, ring_other, cfg):
    """One push: flip a ring so the far stream continues through it.

    Scalar unknowns are the flipped ring's vertices minus the other
    side's -- the sheet vertices sit on other-side tets, so the crease
    values stay pinned while the ring's outer shell is free to absorb
    the relocated discontinuity (that shell is where the divergence of
    the flipped-vs-ambient field now lives, and it is what folds the
    iso-surfaces back to close across the old sheet).
    """
    v = field.vectors.copy()
    v[ring_flip] *= -1.0
    v[ring_flip] = _smooth_ring(mesh, v, ring_flip, cfg)

    unknowns = np.setdiff1d(np.unique(mesh.tets[ring_flip]),
                            np.unique(mesh.tets[ring_other]))
    if len(unknowns) == 0:
        return g.copy(), unknowns
    return _local_poisson(mesh, g, v, unknowns), unknowns


def local_correction_type3(mesh, field, scalar, sheet, iso_values=None,
                           cfg=DEFAULT_CONFIG, ring_depth=3):
    """Repair layers broken by an admissible singular sheet.

    Two passes, one per side: flipping the ring of tets on side b lets
    side a's stream run through the sheet zone and cap itself there,
    and vice versa.  Each pass smooths the flipped ring (boundary shell
    pinned), then re-solves the scalar locally with everything outside
    the ring -- including the sheet vertices -- pinned.  Iso-surfaces
    extracted from the two corrected scalars replace the broken ones;
    values not straddled by any sheet-adjacent tet are untouched.

    The ring must not reach stock or untagged boundary (part contact is
    fine -- the rim lives there); the depth backs off from
    ``ring_depth`` to 1 before giving up.
    """
    from .layers import extract_isosurface

    if not sheet.admissible:
        raise InadmissibleBoundary(
            f"local correction on a {sheet.kind} sheet ({sheet.n_faces} faces)")
    g = _values(scalar)
    side_a, side_b = _sheet_sides(mesh, sheet)
    blocked = set()
    for t, lf in sheet.faces:
        u = int(mesh.neighbors[t, lf])
        blocked.add((min(int(t), u), max(int(t), u)))

    for depth in range(ring_depth, 0, -1):
        ring_a, ring_b = _sheet_rings(mesh, sheet, side_a, side_b, blocked, depth)
        disjoint = not np.intersect1d(ring_a, ring_b).size
        if disjoint and not (_touches_outer_boundary(mesh, ring_a)
                             or _touches_outer_boundary(mesh, ring_b)):
            break
    else:
        raise RingTouchesDomainBoundary(
            "no ring depth keeps the correction away from the outer boundary")

    # pass "a" pushes the conflict into side b's ring and vice versa
    ga, unk_a = _correction_pass(mesh, field, g, ring_b, ring_a, cfg)
    gb, unk_b = _correction_pass(mesh, field, g, ring_a, ring_b, cfg)

    broken, replacements = [], {}
    if iso_values is not None:
        adj = np.union1d(side_a, side_b)
        corner = g[mesh.tets[adj]]
        lo, hi = corner.min(axis=1), corner.max(axis=1)
        for c in iso_values:
            if np.any((hi >= c) & (lo < c)):
                broken.append(float(c))
                replacements[float(c)] = [
                    extract_isosurface(mesh, ScalarField(ga), c),
                    extract_isosurface(mesh, ScalarField(gb), c)]

    return CorrectionResult(ring_depth=depth, side_a=side_a, side_b=side_b,
                            corrected_a=ScalarField(ga), corrected_b=ScalarField(gb),
                            unknowns_a=unk_a, unknowns_b=unk_b,
                            broken_values=broken, replacements=replacements)


# -- driver ----------------------------------------------------------------

def points_off_sheets(points, sheets):
    """Drop point singularities that belong to an admissible sheet.

    A sheet of extremal values always contains a few strict one-ring
    winners; treating those as Type I would re-anchor the middle of the
    sheet and fight the local correction that owns it.  Inadmissible
    sheets get no such deference -- an extremum on one still needs an
    anchor.
    """
    on_sheet = set()
    for sh in sheets:
        if sh.admissible:
            on_sheet.update(int(v) for v in sh.vertices)
    return [p for p in points if p.vertex not in on_sheet]


def classify_and_iterate(mesh, field, anchors, directives=None,
                         cfg=DEFAULT_CONFIG, bc=NATURAL, max_rounds=20,
                         conflict_threshold=0.0, strict=False):
    """Alternate detection and directive-driven resolution.

    Each round solves the scalar, detects extrema and sheets, and
    spends one unconsumed ADD_ANCHOR directive on a matching interior
    extremum (repairs interact, so re-detect between them).  Extrema
    sitting on a singular sheet are the sheet's business and are not
    treated as Type I.  The loop stops when nothing actionable remains:
    either the field is clean or the directives are exhausted, in which
    case leftovers stay in the report for the next interactive round.
    Admissible sheets are repaired at layering time; LOCAL_CORRECTION
    directives just approve that, and REORIENT_SOURCE is acted on a
    level up, by the planner.

    Returns (field, scalar, report); the report carries the augmented
    anchor set.
    """
    directives = list(directives) if directives else []
    for i, d in enumerate(directives):
        if isinstance(d, dict):
            directives[i] = ResolutionDirective(**d)

    resolved = 0
    rounds = 0
    while True:
        rounds += 1
        g = solve_poisson(mesh, field, bc)
        sheets = detect_singular_boundary(mesh, field, conflict_threshold)
        extrema = detect_point_singularities(mesh, g)
        points = points_off_sheets(interior_extrema(extrema), sheets)
        if not points or rounds > max_rounds:
            break
        hit = None
        for p in points:
            for d in directives:
                if d.matches(p):
                    hit = (p, d)
                    break
            if hit:
                break
        if hit is None:
            break                              # out of applicable directives
        p, d = hit
        field, anchors = resolve_type1(mesh, field, anchors, p,
                                       d.anchor_direction, cfg)
        d.consumed = True
        resolved += 1

    if any(sh.admissible for sh in sheets):
        for d in directives:
            if d.action == "LOCAL_CORRECTION" and not d.consumed:
                d.consumed = True
    clean = not points and all(sh.admissible for sh in sheets)
    report = SingularityReport(rounds=rounds, point_singularities=points,
                               all_extrema=extrema,
                               singular_boundaries=sheets,
                               resolved_points=resolved,
                               directives=directives, anchors=anchors,
                               clean=clean)
    if strict and not clean:
        raise UnresolvedSingularities(
            f"{len(points)} point singularities and "
            f"{sum(1 for s in sheets if not s.admissible)} inadmissible sheets remain")
    return field, g, report
