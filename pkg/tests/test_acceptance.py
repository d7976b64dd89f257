"""End-to-end acceptance gate.

One test per headline guarantee, each wired to an oracle that does not
share code with the implementation under test: dense matrix assembly,
brute-force one-ring scans, byte comparison of CLI artifacts.  Run with
``pytest -v tests/test_acceptance.py`` for the one-line-per-criterion
verdict.
"""

import json
import subprocess
import time
from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest

from volpeel import synth
from volpeel.curlfree import remove_curl
from volpeel.diffops import (NATURAL, ScalarField, VectorField,
                             cotan_laplacian, gradient, i_rot,
                             integrated_divergence, mass_matrix,
                             solve_poisson)
from volpeel.fieldopt import AnchorSet, FieldOptConfig, interpolate_field, \
    solve_linear
from volpeel.layers import (extract_isosurface, floating_volume_check,
                            generate_layer_set, layer_stations)
from volpeel.planner import PlanConfig, compare_strategies, run_plan
from volpeel.singularity import detect_singular_boundary, \
    local_correction_type3
from volpeel.tetmesh import save_mesh

from conftest import random_box_mesh, watertight_on_domain


# -- independent oracles ---------------------------------------------------

def brute_interior_extrema(mesh, g):
    """One-ring extrema scan built straight from the tet array.

    Deliberately naive: python sets for adjacency, no shared code with
    the singularity module.
    """
    nbrs = [set() for _ in range(mesh.n_vertices)]
    for tet in np.asarray(mesh.tets):
        for i in range(4):
            for j in range(4):
                if i != j:
                    nbrs[tet[i]].add(int(tet[j]))
    bverts = set()
    for tri in mesh.boundary_face_vertices(np.arange(len(mesh.boundary_faces))):
        bverts.update(int(v) for v in tri)
    out = []
    for v in range(mesh.n_vertices):
        if v in bverts or not nbrs[v]:
            continue
        ring = [g[u] for u in nbrs[v]]
        if g[v] > max(ring) or g[v] < min(ring):
            out.append(v)
    return out


def dense_normal_equations(mesh, anchors, cfg):
    """Dense assembly + numpy solve of the anchored smoothness quadratic."""
    nt = mesh.n_tets
    L = np.zeros((nt, nt))
    for t in range(nt):
        ns = [int(n) for n in mesh.neighbors[t] if n >= 0]
        if not ns:
            continue
        L[t, t] = 1.0
        for n in ns:
            L[t, n] -= 1.0 / len(ns)
    A = (cfg.alpha ** 2) * (L.T @ L)
    rhs = np.zeros((nt, 3))
    for t, a in anchors.effective().items():
        A[t, t] += a.weight ** 2
        rhs[t] += a.weight ** 2 * a.direction
    return np.linalg.solve(A, rhs)


def tree_bytes(root):
    """{relative path: content} for every file under root."""
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


# -- criteria --------------------------------------------------------------

def test_operator_exactness():
    """gradient / Laplacian / mass / adjointness on 20 random meshes."""
    t0 = time.perf_counter()
    for seed in range(20):
        mesh = random_box_mesh(seed)
        rng = np.random.default_rng(seed + 1000)
        a, b = rng.normal(), rng.normal(size=3)
        g_lin = a + mesh.vertices @ b
        grad = gradient(mesh, g_lin).vectors
        assert np.abs(grad - b).max() < 1e-10, f"seed {seed}: gradient not linear-exact"

        L = cotan_laplacian(mesh).tocsr()
        assert abs(L - L.T).max() < 1e-12, f"seed {seed}: Laplacian asymmetric"
        assert np.abs(np.asarray(L.sum(axis=1))).max() < 1e-12, \
            f"seed {seed}: Laplacian row sums nonzero"

        diag = mass_matrix(mesh).tocsr().diagonal()
        vol = float(mesh.volumes.sum())
        assert abs(diag.sum() - vol) < 1e-12, f"seed {seed}: mass sum != |domain|"

        g_r = rng.normal(size=mesh.n_vertices)
        lhs = L @ g_r
        rhs = integrated_divergence(mesh, gradient(mesh, g_r))
        assert np.abs(lhs - rhs).max() <= 1e-8 * np.abs(lhs).max(), \
            f"seed {seed}: adjointness identity broken"
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0, f"operator checks took {elapsed:.1f}s"


def test_poisson_round_trip():
    """v = grad(linear) -> solve -> same field up to a constant, curl-free."""
    t0 = time.perf_counter()
    meshes = [random_box_mesh(s) for s in (30, 31, 32)] + [synth.cube_grid(6)]
    for k, mesh in enumerate(meshes):
        rng = np.random.default_rng(k)
        b = rng.normal(size=3)
        g_true = mesh.vertices @ b
        v = VectorField(np.broadcast_to(b, (mesh.n_tets, 3)).copy())
        sol = solve_poisson(mesh, v, NATURAL)
        err = sol.values - g_true
        err -= err.mean()
        assert np.abs(err).max() < 1e-8, f"mesh {k}: recovery off by constant+{np.abs(err).max():.2e}"
        rot = i_rot(mesh, gradient(mesh, sol.values))
        assert rot < 1e-10, f"mesh {k}: recovered field has I_rot {rot:.2e}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0, f"round trips took {elapsed:.1f}s"


# Moderate weights keep the normal equations well conditioned so two
# correct solvers can agree to 1e-6; at the production defaults
# (beta_critical = 1e8) the condition number sits near 1e16 and any
# pair of float64 direct solves drifts apart at exactly that level.
PARITY_CFG = FieldOptConfig(alpha=1.0, beta_general=300.0, beta_critical=2000.0)


def test_interpolation_matches_dense_oracle():
    """Sparse pre-normalization solve == dense normal equations, 10 draws."""
    for seed in range(10):
        mesh = random_box_mesh(seed, max_cells=3)
        assert mesh.n_tets <= 500
        rng = np.random.default_rng(seed)
        anchors = AnchorSet()
        tets = rng.choice(mesh.n_tets, size=3, replace=False)
        for i, t in enumerate(tets):
            crit = i == 0
            w = PARITY_CFG.beta_critical if crit else PARITY_CFG.beta_general
            anchors.add_tet(int(t), rng.normal(size=3), weight=w, critical=crit)
        got = solve_linear(mesh, anchors, PARITY_CFG)
        want = dense_normal_equations(mesh, anchors, PARITY_CFG)
        npt.assert_allclose(got, want, atol=1e-6,
                            err_msg=f"seed {seed}: sparse/dense disagree")
        # and the public entry point is exactly the normalized version
        unit = interpolate_field(mesh, anchors, PARITY_CFG).vectors
        npt.assert_allclose(unit, got / np.linalg.norm(got, axis=1)[:, None],
                            atol=1e-12)


def test_curl_removal_convergence():
    """Two conflicting critical anchors at 55k tets: I_rot drops to 4e-4."""
    n = 21
    cube = synth.cube_grid(n)
    assert cube.n_tets >= 50_000
    anchors = AnchorSet()
    for t in np.nonzero(cube.centroids[:, 2] < 1 / n)[0][::4]:
        anchors.add_tet(int(t), (0, 0, 1))
    th = np.deg2rad(110.0)
    anchors.add_tet(cube.locate_point([0.35, 0.5, 0.5]), (0, 0, 1),
                    critical=True)
    anchors.add_tet(cube.locate_point([0.65, 0.5, 0.5]),
                    (0, np.sin(th), np.cos(th)), critical=True)
    field0 = interpolate_field(cube, anchors)
    initial = i_rot(cube, field0)
    assert initial > 1e-2, f"construction too tame: initial I_rot {initial:.2e}"

    t0 = time.perf_counter()
    report = remove_curl(cube, field0, anchors, max_iters=50)
    elapsed = time.perf_counter() - t0

    final = i_rot(cube, report.final_field)     # recomputed, not loop state
    assert final <= 4e-4, f"I_rot stuck at {final:.3e} after {report.iterations} iters"
    assert report.iterations <= 50
    assert len(report.i_rot_history) >= 2
    assert report.i_rot_history[-1] < report.i_rot_history[0]
    assert elapsed < 120.0, f"curl removal took {elapsed:.1f}s at {cube.n_tets} tets"
    print(f"curl removal: initial {initial:.3e} -> final {final:.3e} "
          f"in {report.iterations} iters, {elapsed:.1f}s, {cube.n_tets} tets")


FLASK_PLAN = dict(strategy="CONVEX_HULL_SOURCE", bc="DIRICHLET_PART",
                  layer_count=8, blend_alpha=0.5, blend_ring=3)


def test_singularity_certificate():
    """Cavity trap appears, one ADD_ANCHOR round clears it, nothing floats."""
    mesh = synth.flask()
    first = run_plan(mesh, PlanConfig(**FLASK_PLAN))
    trapped = first.singularity_report.point_singularities
    assert len(trapped) >= 1, "hull seeding produced no interior singularity"
    assert all(p.interior for p in trapped)
    assert len(brute_interior_extrema(mesh, first.scalar.values)) >= 1, \
        "detector fired but the brute scan sees no interior extremum"

    fixed = run_plan(mesh, PlanConfig(**FLASK_PLAN, directives=[
        {"action": "ADD_ANCHOR", "anchor_direction": (0.45, 0.0, 0.89)}]))
    assert fixed.singularity_report.resolved_points >= 1
    leftovers = brute_interior_extrema(mesh, fixed.scalar.values)
    assert leftovers == [], f"interior extrema survive at vertices {leftovers}"

    # remaining material below each station must stay attached to the part;
    # the check keeps {values >= c}, so hand it the negated field
    g = fixed.scalar.values
    stations = [layer.value for layer in fixed.layer_set.layers]
    floating = floating_volume_check(mesh, ScalarField(-g),
                                     [-c for c in stations])
    assert floating == [], f"floating material at {len(floating)} stations"
    assert fixed.valid
    print(f"certificate: {len(trapped)} trap(s) -> 0 after one directive round, "
          f"0 floating violations over {len(stations)} stations")


def test_type3_correction():
    """Opposed streams break mid-bar layers; corrections are watertight."""
    bar = synth.two_stream_bar()
    anchors = AnchorSet()
    for t in synth.end_tets(bar, axis=0, side="low"):
        anchors.add_tet(int(t), (0, 0, 1), critical=True)
    for t in synth.end_tets(bar, axis=0, side="high"):
        anchors.add_tet(int(t), (0, 0, -1), critical=True)
    field = interpolate_field(bar, anchors)
    g = solve_poisson(bar, field, NATURAL)
    sheets = [s for s in detect_singular_boundary(bar, field) if s.admissible]
    assert len(sheets) >= 1, "no admissible singular sheet detected"
    sheet = sheets[0]
    adjacent = set()
    for t, lf in sheet.faces:
        adjacent.add(int(t))
        adjacent.add(int(bar.neighbors[t, lf]))

    stations = layer_stations(g.values.min(), g.values.max(), layer_count=24)
    result = local_correction_type3(bar, field, g, sheet, iso_values=stations)
    assert len(result.broken_values) >= 1, "no layer crosses the sheet zone"

    for c in result.broken_values:
        # the uncorrected extraction really runs through the conflict zone
        plain = extract_isosurface(bar, g, c)
        in_zone = np.isin(plain.source_tets, list(adjacent))
        assert in_zone.any(), f"iso {c:+.4f} flagged broken but avoids the sheet"
        repl = result.replacements[c]
        assert len(repl) >= 1
        for surf in repl:
            assert len(surf.triangles) > 0
            assert watertight_on_domain(bar, surf.points, surf.triangles), \
                f"replacement at iso {c:+.4f} is not watertight"
    print(f"type III: {len(result.broken_values)} broken stations of "
          f"{len(stations)}, all replacements watertight")


def test_layer_geometry():
    """Planar stack is exact; a converged freeform stack is near-uniform."""
    # planar: g = z on the unit cube, every layer a unit square
    cube = synth.cube_grid(10)
    flat = generate_layer_set(cube, ScalarField(cube.vertices[:, 2].copy()),
                              layer_count=10)
    for layer in flat.layers:
        pts = np.vstack([s.points for s in layer.surfaces])
        tris = [s.triangles for s in layer.surfaces]
        assert np.abs(pts[:, 2] - layer.value).max() < 1e-9, "layer not planar"
        area = sum(
            0.5 * np.linalg.norm(np.cross(s.points[t[:, 1]] - s.points[t[:, 0]],
                                          s.points[t[:, 2]] - s.points[t[:, 0]]),
                                 axis=1).sum()
            for s, t in zip(layer.surfaces, tris))
        assert abs(area - 1.0) < 1e-6, f"layer area {area:.8f} != 1"
    stats = flat.spacing_stats()["overall"]
    assert stats["std"] / stats["mean"] < 1e-6

    # freeform: smoothly rotating bottom anchors, curl removed
    n, tilt = 14, np.deg2rad(40.0)
    mesh = synth.cube_grid(n)
    anchors = AnchorSet()
    for t in np.nonzero(mesh.centroids[:, 2] < 1 / n)[0]:
        th = tilt * mesh.centroids[t, 0]
        anchors.add_tet(int(t), (np.sin(th), 0.0, np.cos(th)))
    report = remove_curl(mesh, interpolate_field(mesh, anchors), anchors,
                         max_iters=50)
    assert report.converged
    curved = generate_layer_set(mesh, report.final_scalar, layer_count=10)
    mid = curved.layers[len(curved.layers) // 2]
    relief = max(float(s.points[:, 2].max() - s.points[:, 2].min())
                 for s in mid.surfaces)
    assert relief > 0.1, "freeform case degenerated to planar layers"
    stats = curved.spacing_stats()["overall"]
    ratio = stats["std"] / stats["mean"]
    assert ratio < 0.05, f"freeform spacing std/mean {ratio:.4f}"
    print(f"layer geometry: planar exact, freeform spacing std/mean {ratio:.4f} "
          f"(relief {relief:.3f})")


def test_strategy_comparison_ordering():
    """Conformal peeling beats plane slicing >= 3x on the terrain scene."""
    mesh = synth.terrain(16, 16, 6)
    part = synth.part_surface_of(mesh)
    configs = [PlanConfig(strategy="PART_NORMALS_SOURCE", bc="DIRICHLET_PART",
                          depth=0.05, label="conformal"),
               PlanConfig(strategy="PLANAR", depth=0.05, label="planar")]
    report = compare_strategies(mesh, part, configs)
    conformal, planar = report["conformal"], report["planar"]
    assert conformal.valid and planar.valid
    assert conformal.max_depth < planar.max_depth
    ratio = report.ratio("planar", "conformal")
    assert ratio >= 3.0, f"planar/conformal depth ratio only {ratio:.2f}"
    print(f"comparison: conformal {conformal.max_depth:.4f} vs planar "
          f"{planar.max_depth:.4f}, ratio {ratio:.2f}")


def test_plan_determinism(tmp_path):
    """Identical inputs -> byte-identical plan directories, twice over."""
    mesh = synth.cube_scene(6)
    save_mesh(mesh, tmp_path / "scene")
    bottom = np.nonzero(mesh.centroids[:, 2] < 1 / 6)[0][::3]
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "strategy": "ANCHORS_ONLY", "bc": "DIRICHLET_PART", "layer_count": 4,
        "anchors": [{"tet": int(t), "direction": [0, 0, 1]} for t in bottom]}))
    outs = []
    for name in ("first", "second"):
        out = tmp_path / name
        proc = subprocess.run(
            ["peel", "plan", "--mesh", str(tmp_path / "scene.node"),
             "--config", str(cfg), "--out", str(out)],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr or proc.stdout
        outs.append(tree_bytes(out))
    first, second = outs
    assert first.keys() == second.keys()
    diff = [k for k in first if first[k] != second[k]]
    assert diff == [], f"files differ between runs: {diff}"
    assert len(first) >= 3          # config, plan, at least one layer file
    print(f"determinism: {len(first)} files byte-identical across runs")
