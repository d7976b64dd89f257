"""volpeel: curved peeling-layer planning for multi-axis rough machining.

Decomposes a tetrahedralized machining volume into a stack of curved
layers by optimizing an anchored direction field, removing its
rotational component, solving for a peeling scalar, and slicing its
level sets -- with detection and repair of the singularities that make
such fields unmachinable.
"""

from .curlfree import IROT_THRESHOLD, CurlRemovalReport, remove_curl
from .diffops import (NATURAL, BoundaryCondition, ScalarField, VectorField,
                      cotan_laplacian, dirichlet, gradient,
                      integrated_divergence, i_rot, mass_matrix, solve_poisson)
from .errors import PeelError
from .fieldopt import (DEFAULT_CONFIG, Anchor, AnchorSet, FieldOptConfig,
                       anchor_residual, blend_with_normals, interpolate_field)
from .kernels import BACKEND
from .layers import (DepthVariationReport, FloatingViolation, IsoSurface,
                     Layer, LayerSet, depth_variation, export_layers,
                     extract_isosurface, floating_volume_check,
                     generate_layer_set, layer_stations, load_obj, load_stl)
from .planner import (STRATEGIES, ComparisonReport, PeelingPlan, PlanConfig,
                      StrategyOutcome, compare_strategies, convex_hull_source,
                      run_plan, serialize_plan)
from .singularity import (PointSingularity, ResolutionDirective,
                          SingularBoundary, SingularityReport,
                          classify_and_iterate, detect_point_singularities,
                          detect_singular_boundary, local_correction_type3,
                          orient_source_surface, resolve_type1)
from .tetmesh import (BoundaryTag, TetMesh, load_mesh, save_mesh,
                      tag_boundary_from_surface)

__version__ = "0.1.0"

__all__ = [
    "Anchor", "AnchorSet", "BACKEND", "BoundaryCondition", "BoundaryTag",
    "ComparisonReport", "CurlRemovalReport", "DEFAULT_CONFIG",
    "DepthVariationReport", "FieldOptConfig", "FloatingViolation",
    "IROT_THRESHOLD", "IsoSurface", "Layer", "LayerSet", "NATURAL",
    "PeelError", "PeelingPlan", "PlanConfig", "PointSingularity",
    "ResolutionDirective", "STRATEGIES", "ScalarField", "SingularBoundary",
    "SingularityReport", "StrategyOutcome", "TetMesh", "VectorField",
    "anchor_residual", "blend_with_normals", "classify_and_iterate",
    "compare_strategies", "convex_hull_source", "cotan_laplacian",
    "depth_variation", "detect_point_singularities",
    "detect_singular_boundary", "dirichlet", "export_layers",
    "extract_isosurface", "floating_volume_check", "generate_layer_set",
    "gradient", "i_rot", "integrated_divergence", "interpolate_field",
    "layer_stations", "load_mesh", "load_obj", "load_stl",
    "local_correction_type3", "mass_matrix", "orient_source_surface",
    "remove_curl", "resolve_type1", "run_plan", "save_mesh",
    "serialize_plan", "solve_poisson", "tag_boundary_from_surface",
]
