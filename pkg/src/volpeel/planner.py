"""End-to-end peeling plans: seed, repair, de-curl, slice, validate.

A plan runs the staged pipeline on one mesh:

1. seed a field from the chosen strategy (user anchors, convex hull,
   part normals, or a plain plane sweep),
2. resolve point singularities with the configured directives,
3. remove the rotational component,
4. re-detect singularities on the corrected field (one more directive
   round is allowed if the correction uncovered new ones),
5. correct layers crossing admissible singular sheets,
6. extract layers and audit every station for floating material.

Strategies differ only in stage 1; PLANAR additionally skips 2-4 since
an affine scalar is already an exact, singularity-free gradient.  A
stage failure marks the plan invalid with the stage recorded instead of
raising, so a partial plan can still be inspected.
"""

import time
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .curlfree import IROT_THRESHOLD, remove_curl
from .diffops import (NATURAL, ScalarField, VectorField, dirichlet, i_rot,
                      solve_poisson)
from .errors import DegenerateInput, EmptyAnchorSet, PeelError
from .fieldopt import (AnchorSet, FieldOptConfig, blend_with_normals,
                       interpolate_field)
from .layers import (_merged, depth_variation, floating_volume_check,
                     generate_layer_set, layer_stations)
from .singularity import (ResolutionDirective, classify_and_iterate,
                          detect_point_singularities, detect_singular_boundary,
                          interior_extrema, local_correction_type3,
                          orient_source_surface, points_off_sheets)
from .tetmesh import BoundaryTag

STRATEGIES = ("ANCHORS_ONLY", "CONVEX_HULL_SOURCE", "PART_NORMALS_SOURCE",
              "PLANAR")
BC_CHOICES = ("NATURAL", "DIRICHLET_PART", "DIRICHLET_STOCK")


@dataclass
class PlanConfig:
    strategy: str = "CONVEX_HULL_SOURCE"
    bc: str = "NATURAL"          # DIRICHLET_PART makes the last layer the part
    depth: float = None
    layer_count: int = None
    fieldopt: FieldOptConfig = dc_field(default_factory=FieldOptConfig)
    irot_threshold: float = IROT_THRESHOLD
    max_curl_iters: int = 100
    curl_hold: float = 0.0       # x beta_general kept on general anchors in curl removal
    blend_alpha: float = 0.5     # hull seeding: how much hull vs part normal
    blend_ring: int = 2          # how far the part-normal blend reaches
    ring_depth: int = 3          # sheet-correction ring size
    max_rounds: int = 20
    conflict_threshold: float = 0.0
    directives: list = dc_field(default_factory=list)
    planar_axis: tuple = (0.0, 0.0, 1.0)
    spacing_samples: int = 200
    seed: int = 42
    label: str = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; "
                             f"pick one of {', '.join(STRATEGIES)}")
        if self.bc not in BC_CHOICES:
            raise ValueError(f"unknown boundary condition {self.bc!r}; "
                             f"pick one of {', '.join(BC_CHOICES)}")
        if self.depth is None and self.layer_count is None:
            raise ValueError("need depth or layer_count")
        if self.strategy == "PLANAR":
            if self.planar_axis is None:
                raise ValueError("PLANAR needs a peel direction (planar_axis)")
            if float(np.linalg.norm(self.planar_axis)) < 1e-12:
                raise ValueError("planar_axis must be nonzero")
        self.directives = [ResolutionDirective(**d) if isinstance(d, dict)
                           else d for d in self.directives]

    def boundary_condition(self):
        if self.bc == "DIRICHLET_PART":
            return dirichlet(BoundaryTag.PART, 0.0)
        if self.bc == "DIRICHLET_STOCK":
            return dirichlet(BoundaryTag.STOCK, 0.0)
        return NATURAL

    def to_dict(self):
        return {"strategy": self.strategy, "bc": self.bc, "depth": self.depth,
                "layer_count": self.layer_count,
                "fieldopt": self.fieldopt.to_dict(),
                "irot_threshold": self.irot_threshold,
                "max_curl_iters": self.max_curl_iters,
                "curl_hold": self.curl_hold,
                "blend_alpha": self.blend_alpha,
                "blend_ring": self.blend_ring,
                "ring_depth": self.ring_depth, "max_rounds": self.max_rounds,
                "conflict_threshold": self.conflict_threshold,
                "directives": [d.to_dict() for d in self.directives],
                "planar_axis": (list(self.planar_axis)
                                if self.planar_axis is not None else None),
                "spacing_samples": self.spacing_samples, "seed": self.seed,
                "label": self.label}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("fieldopt"), dict):
            d["fieldopt"] = FieldOptConfig.from_dict(d["fieldopt"])
        if d.get("planar_axis") is not None:
            d["planar_axis"] = tuple(d["planar_axis"])
        return cls(**d)


@dataclass
class PeelingPlan:
    config: PlanConfig
    field: VectorField = None
    scalar: ScalarField = None
    anchors: AnchorSet = None
    layer_set: object = None
    curl_report: object = None
    singularity_report: object = None
    corrections: list = dc_field(default_factory=list)
    floating: list = dc_field(default_factory=list)   # negated-scalar values
    residual_points: list = dc_field(default_factory=list)
    residual_sheets: list = dc_field(default_factory=list)
    valid: bool = False
    failed_stage: str = None
    notes: list = dc_field(default_factory=list)
    timings: dict = dc_field(default_factory=dict)

    def final_layer(self):
        """The layer machined last: the one closest to the part."""
        if self.layer_set is None or not len(self.layer_set):
            return None
        return self.layer_set.layers[self.layer_set.machining_order()[-1]]


def convex_hull_source(mesh):
    """(vertices, outward-oriented hull triangles) of the material.

    Triangle indices refer to the mesh's own vertex array; orientation
    follows Qhull's outward facet normals.
    """
    pts = mesh.vertices
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateInput(f"convex hull failed: {exc}")
    tris = hull.simplices.astype(np.int64)
    p = pts[tris]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    wrong = np.einsum("ij,ij->i", n, hull.equations[:, :3]) < 0.0
    tris[wrong] = tris[wrong][:, [0, 2, 1]]
    return pts, tris


def _part_normal_anchors(mesh, weight=None):
    part = mesh.faces_with_tag(BoundaryTag.PART)
    if not len(part):
        raise EmptyAnchorSet("PART_NORMALS_SOURCE needs PART-tagged faces")
    t = mesh.boundary_faces[part, 0]
    s = mesh.face_vectors[t, mesh.boundary_faces[part, 1]]
    acc = np.zeros((mesh.n_tets, 3))
    np.add.at(acc, t, s)                      # a tet may own several part faces
    anchors = AnchorSet()
    for tet in np.unique(t):
        n = np.linalg.norm(acc[tet])
        if n > 1e-12:
            anchors.add_tet(int(tet), acc[tet] / n, weight=weight)
    return anchors


def _merge(base, extra):
    out = base.copy()
    if extra is not None:
        for _, a in extra.items():
            out.add(a)                        # user anchors override seeds
    return out


def _flip_requested(config):
    for d in config.directives:
        if d.action == "REORIENT_SOURCE" and not d.consumed:
            d.consumed = True
            return True
    return False


def _hold_weight(config):
    if config.curl_hold <= 0:
        return None
    return config.curl_hold * config.fieldopt.beta_general


def _seed_field(mesh, config, user_anchors):
    """Stage 1: (field, anchors, notes) for the chosen strategy."""
    notes = []
    flip = _flip_requested(config)
    if flip:
        notes.append("source orientation flipped by directive")

    if config.strategy == "ANCHORS_ONLY":
        if user_anchors is None or not len(user_anchors):
            raise EmptyAnchorSet("ANCHORS_ONLY requires at least one anchor")
        anchors = user_anchors.copy()
        return interpolate_field(mesh, anchors, config.fieldopt), anchors, notes

    if config.strategy == "CONVEX_HULL_SOURCE":
        hv, ht = convex_hull_source(mesh)
        if flip:
            ht = ht[:, [0, 2, 1]]
        anchors = _merge(orient_source_surface(mesh, hv, ht,
                                               weight=config.fieldopt.beta_general),
                         user_anchors)
        if not len(anchors):
            raise EmptyAnchorSet("every hull facet was skipped; nothing to seed")
        field = interpolate_field(mesh, anchors, config.fieldopt)
        if config.blend_alpha < 1.0:
            blended = blend_with_normals(field, mesh, config.blend_alpha,
                                         ring_depth=config.blend_ring)
            changed = np.nonzero(
                np.abs(blended.vectors - field.vectors).max(axis=1) > 1e-12)[0]
            for t in changed:                 # re-anchor so repairs keep the blend
                anchors.add_tet(int(t), blended.vectors[t],
                                weight=config.fieldopt.beta_general)
            field = interpolate_field(mesh, anchors, config.fieldopt)
            notes.append(f"blended {len(changed)} near-part tets "
                         f"(alpha={config.blend_alpha})")
        return field, anchors, notes

    if config.strategy == "PART_NORMALS_SOURCE":
        seeds = _part_normal_anchors(mesh, config.fieldopt.beta_general)
        if flip:
            for _, a in seeds.items():
                a.direction = -a.direction
        anchors = _merge(seeds, user_anchors)
        return interpolate_field(mesh, anchors, config.fieldopt), anchors, notes

    # PLANAR: constant sweep direction, no optimization
    axis = np.asarray(config.planar_axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    if flip:
        axis = -axis
    vec = np.broadcast_to(axis, (mesh.n_tets, 3)).copy()
    return VectorField(vec, normalized=True), AnchorSet(), notes


def run_plan(mesh, config, anchors=None, on_progress=None):
    """Run the full staged pipeline; always returns a PeelingPlan.

    An invalid outcome (floating material, a Type IV sheet, curl removal
    not converging, a stage raising) is reported through ``valid``,
    ``failed_stage`` and ``notes``, not an exception.
    ``on_progress(stage, payload)`` is called as stages start and as
    curl iterations complete.
    """
    def progress(name, **payload):
        if on_progress is not None:
            on_progress(name, payload)

    timings = {}
    tic = time.perf_counter
    notes = []
    plan = PeelingPlan(config=config, notes=notes, timings=timings)

    def fail(stage, exc):
        notes.append(f"{stage} stage failed: {exc}")
        plan.failed_stage = stage
        plan.valid = False
        progress("failed", stage=stage, error=str(exc))
        return plan

    stage = "field"
    t0 = tic()
    progress(stage, strategy=config.strategy)
    try:
        field, anchors, seed_notes = _seed_field(mesh, config, anchors)
    except PeelError as exc:
        return fail(stage, exc)
    notes.extend(seed_notes)
    plan.field, plan.anchors = field, anchors
    timings[stage] = tic() - t0

    bc = config.boundary_condition()
    sing_report = None
    curl_report = None
    if config.strategy == "PLANAR":
        # a plane sweep ignores bc: the scalar is the axis coordinate itself
        scalar = ScalarField(mesh.vertices @ field.vectors[0])
        sheets = detect_singular_boundary(mesh, field,
                                          config.conflict_threshold)
        points = points_off_sheets(
            interior_extrema(detect_point_singularities(mesh, scalar)), sheets)
    else:
        stage = "singularity"
        t0 = tic()
        progress(stage)
        try:
            field, scalar, sing_report = classify_and_iterate(
                mesh, field, anchors, directives=config.directives,
                cfg=config.fieldopt, bc=bc, max_rounds=config.max_rounds,
                conflict_threshold=config.conflict_threshold)
        except PeelError as exc:
            return fail(stage, exc)
        anchors = sing_report.anchors
        plan.field, plan.anchors, plan.singularity_report = \
            field, anchors, sing_report
        timings[stage] = tic() - t0

        stage = "curl"
        t0 = tic()
        progress(stage)
        try:
            curl_report = remove_curl(
                mesh, field, anchors, config.fieldopt,
                threshold=config.irot_threshold,
                max_iters=config.max_curl_iters,
                general_weight=_hold_weight(config),
                on_iteration=lambda i, v: progress("curl", iteration=i, i_rot=v))
        except PeelError as exc:
            return fail(stage, exc)
        field = curl_report.final_field
        plan.field, plan.curl_report = field, curl_report
        timings[stage] = tic() - t0
        if not curl_report.converged:
            notes.append(f"curl removal stopped at I_rot="
                         f"{curl_report.final_i_rot:.3e}")

        stage = "recheck"
        t0 = tic()
        progress(stage)
        try:
            scalar = solve_poisson(mesh, field, bc)
            sheets = detect_singular_boundary(mesh, field,
                                              config.conflict_threshold)
            points = points_off_sheets(
                interior_extrema(detect_point_singularities(mesh, scalar)),
                sheets)
            if points and any(d.matches(p) for d in config.directives
                              for p in points):
                # curl removal uncovered new extrema: one more round
                notes.append(f"{len(points)} extrema after curl removal; "
                             f"running one more directive round")
                field, scalar, sing_report = classify_and_iterate(
                    mesh, field, anchors, directives=config.directives,
                    cfg=config.fieldopt, bc=bc, max_rounds=config.max_rounds,
                    conflict_threshold=config.conflict_threshold)
                anchors = sing_report.anchors
                curl_report = remove_curl(
                    mesh, field, anchors, config.fieldopt,
                    threshold=config.irot_threshold,
                    max_iters=config.max_curl_iters,
                    general_weight=_hold_weight(config),
                    on_iteration=lambda i, v: progress("curl", iteration=i,
                                                       i_rot=v))
                field = curl_report.final_field
                scalar = solve_poisson(mesh, field, bc)
                sheets = detect_singular_boundary(mesh, field,
                                                  config.conflict_threshold)
                points = points_off_sheets(
                    interior_extrema(detect_point_singularities(mesh, scalar)),
                    sheets)
                plan.singularity_report, plan.curl_report = \
                    sing_report, curl_report
        except PeelError as exc:
            return fail(stage, exc)
        plan.field, plan.anchors, plan.scalar = field, anchors, scalar
        timings[stage] = tic() - t0

    plan.scalar = scalar
    plan.residual_points, plan.residual_sheets = points, sheets
    g = scalar.values

    stage = "correction"
    t0 = tic()
    corrections_out = []
    correction_failed = False
    station_repl = {}
    try:
        stations = layer_stations(g.min(), g.max(), depth=config.depth,
                                  layer_count=config.layer_count)
    except PeelError as exc:
        return fail(stage, exc)
    for sheet in sheets:
        if not sheet.admissible:
            notes.append(f"type4 sheet with {sheet.n_faces} faces "
                         f"left in place")
            continue
        progress(stage, faces=sheet.n_faces)
        try:
            result = local_correction_type3(mesh, field, scalar, sheet,
                                            iso_values=stations,
                                            cfg=config.fieldopt,
                                            ring_depth=config.ring_depth)
        except PeelError as exc:
            notes.append(f"sheet correction failed: {exc}")
            correction_failed = True
            continue
        corrections_out.append(result)
        for c, surfs in result.replacements.items():
            station_repl.setdefault(c, []).extend(surfs)
    plan.corrections = corrections_out
    timings[stage] = tic() - t0

    stage = "layers"
    t0 = tic()
    progress(stage, count=len(stations))
    try:
        layer_set = generate_layer_set(mesh, scalar, depth=config.depth,
                                       corrections=station_repl,
                                       spacing_samples=config.spacing_samples,
                                       seed=config.seed, stations=stations)
    except PeelError as exc:
        return fail(stage, exc)
    plan.layer_set = layer_set
    timings[stage] = tic() - t0

    stage = "validity"
    t0 = tic()
    progress(stage)
    try:
        # the material left after cutting at c is {g <= c}: flip signs
        floating = floating_volume_check(mesh, ScalarField(-g),
                                         [-c for c in stations])
    except PeelError as exc:
        return fail(stage, exc)
    plan.floating = floating
    timings[stage] = tic() - t0

    if floating:
        at = sorted({-v.value for v in floating})
        notes.append(f"floating material at stations {at[:4]}")
    if points:
        notes.append(f"{len(points)} interior extrema remain")
    plan.valid = (not floating
                  and not points
                  and not correction_failed
                  and all(sh.admissible for sh in sheets)
                  and (curl_report is None or curl_report.converged))
    progress("done", valid=plan.valid, layers=len(layer_set))
    return plan


# -- comparison ------------------------------------------------------------

@dataclass
class StrategyOutcome:
    label: str
    strategy: str
    valid: bool
    n_layers: int
    i_rot: float
    max_depth: float
    avg_variation: float
    runtime: float
    depth_report: object = None
    plan: PeelingPlan = None


@dataclass
class ComparisonReport:
    outcomes: list

    def __getitem__(self, label):
        for o in self.outcomes:
            if o.label == label:
                return o
        raise KeyError(label)

    def ratio(self, worse, better):
        """How many times deeper `worse` cuts than `better` at its worst."""
        num = self[worse].max_depth
        den = self[better].max_depth
        return num / den if den > 0 else float("inf")

    def table(self, include_runtime=True):
        # runtimes stay out of written artifacts so reruns are identical
        rows = [("label", "valid", "layers", "I_rot", "max_depth",
                 "avg_variation") + (("runtime_s",) if include_runtime else ())]
        for o in self.outcomes:
            row = (o.label, str(o.valid), str(o.n_layers),
                   f"{o.i_rot:.3e}", f"{o.max_depth:.4f}",
                   f"{o.avg_variation:.5f}")
            if include_runtime:
                row += (f"{o.runtime:.1f}",)
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
                         for r in rows)

    def to_dict(self):
        return {"outcomes": [{
            "label": o.label, "strategy": o.strategy, "valid": o.valid,
            "n_layers": o.n_layers, "i_rot": o.i_rot,
            "max_depth": o.max_depth, "avg_variation": o.avg_variation}
            for o in self.outcomes]}


def compare_strategies(mesh, part_surface, configs, anchors=None,
                       sample_count=2000, on_progress=None):
    """Run several plan configs on one mesh and measure the final cut.

    ``part_surface`` is a (points, triangles) pair; each plan's final
    layer (the one machined last, right above the part) is measured
    against it with depth_variation.  The headline numbers are the max
    cutting depth and the successive variation along contour bands --
    a plane sweep over a curved part maxes out at the full relief
    height, a conformal field at roughly one layer spacing.
    """
    part_points = np.asarray(part_surface[0], dtype=np.float64)
    outcomes = []
    seen = {}
    for cfg in configs:
        label = cfg.label or cfg.strategy
        if label in seen:
            seen[label] += 1
            label = f"{label}#{seen[label]}"
        else:
            seen[label] = 0
        if on_progress is not None:
            on_progress("plan", {"label": label})
        t0 = time.perf_counter()
        plan = run_plan(mesh, cfg, anchors=anchors, on_progress=on_progress)
        runtime = time.perf_counter() - t0
        final = plan.final_layer()
        dv = None
        if final is not None and plan.scalar is not None:
            band_values = (plan.scalar.values
                           if len(part_points) == mesh.n_vertices else None)
            dv = depth_variation(_merged(final.surfaces), part_surface,
                                 sample_count=sample_count,
                                 band_values=band_values, seed=cfg.seed)
        outcomes.append(StrategyOutcome(
            label=label, strategy=cfg.strategy, valid=plan.valid,
            n_layers=len(plan.layer_set) if plan.layer_set else 0,
            i_rot=i_rot(mesh, plan.field) if plan.field is not None else float("nan"),
            max_depth=dv.max_depth if dv else float("nan"),
            avg_variation=dv.avg_variation if dv else float("nan"),
            runtime=runtime, depth_report=dv, plan=plan))
    return ComparisonReport(outcomes)


# -- serialization ---------------------------------------------------------

def serialize_plan(plan, include_timings=False):
    """JSON-ready summary of a plan (no geometry arrays).

    Deterministic for a fixed plan: floats keep full repr precision, key
    order is fixed by construction, and wall-clock timings stay out
    unless explicitly asked for.
    """
    layers = None
    if plan.layer_set is not None:
        layers = []
        for idx in plan.layer_set.machining_order():
            layer = plan.layer_set.layers[idx]
            layers.append({"value": layer.value,
                           "pieces": len(layer.surfaces),
                           "n_triangles": int(sum(s.n_triangles
                                                  for s in layer.surfaces)),
                           "area": layer.area(),
                           "corrected": layer.corrected,
                           "spacing": layer.spacing})
    sing = plan.singularity_report.summary() if plan.singularity_report else None
    curl = None
    if plan.curl_report is not None:
        curl = {"iterations": plan.curl_report.iterations,
                "converged": plan.curl_report.converged,
                "threshold": plan.curl_report.threshold,
                "history": [float(v) for v in plan.curl_report.i_rot_history]}
    out = {"config": plan.config.to_dict(),
           "valid": plan.valid,
           "failed_stage": plan.failed_stage,
           "n_layers": len(plan.layer_set) if plan.layer_set is not None else 0,
           "values": (list(plan.layer_set.values)
                      if plan.layer_set is not None else []),
           "spacing": plan.layer_set.spacing if plan.layer_set else None,
           "layers": layers,
           "curl": curl,
           "singularities": sing,
           "floating": [{"station": -f.value, "n_tets": int(len(f.tets)),
                         "volume": f.volume} for f in plan.floating],
           "corrections": [{"ring_depth": c.ring_depth,
                            "broken_values": [float(v) for v in c.broken_values]}
                           for c in plan.corrections],
           "notes": list(plan.notes)}
    if include_timings:
        out["timings"] = {k: round(v, 6) for k, v in plan.timings.items()}
    return out
