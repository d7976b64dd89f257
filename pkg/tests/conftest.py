import numpy as np
import pytest

from volpeel import synth
from volpeel.geometry import closest_point_distances
from volpeel.tetmesh import TetMesh


def random_box_mesh(seed, max_cells=4):
    """Small warped box grid with guaranteed positive tet volumes."""
    rng = np.random.default_rng(seed)
    nx, ny, nz = rng.integers(2, max_cells + 1, size=3)

    def warp(v):
        out = v + 0.06 * np.sin(2.0 * np.pi * v[:, [1, 2, 0]] + rng.uniform(0, 6))
        a = np.eye(3) + rng.uniform(-0.08, 0.08, size=(3, 3))
        return out @ a.T

    mesh = synth.box_grid(nx, ny, nz, size=rng.uniform(0.6, 1.5, size=3),
                          warp=warp)
    assert mesh.volumes.min() > 0
    return mesh


def regular_tet_mesh(edge=1.0):
    """A single regular tetrahedron with the given edge length."""
    verts = edge * np.array([
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.5, np.sqrt(3.0) / 2.0, 0.0],
        [0.5, np.sqrt(3.0) / 6.0, np.sqrt(2.0 / 3.0)],
    ])
    return TetMesh(verts, np.array([[0, 1, 2, 3]]))


def surface_edge_counts(triangles):
    counts = {}
    for tri in np.asarray(triangles):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            counts[key] = counts.get(key, 0) + 1
    return counts


def watertight_on_domain(mesh, points, triangles, tol_scale=1e-7):
    """True when the triangulated sheet is edge-manifold and every open
    edge lies on the domain boundary surface.

    "Watertight" for an iso-surface clipped by the domain: interior edges
    shared by exactly two triangles, and any one-triangle edge sitting on
    d-Omega (it is sealed by the stock wall, not a hole).
    """
    if not len(triangles):
        return False
    counts = surface_edge_counts(triangles)
    if any(c > 2 for c in counts.values()):
        return False
    open_verts = sorted({v for e, c in counts.items() if c == 1 for v in e})
    if not open_verts:
        return True
    btris = mesh.boundary_face_vertices(np.arange(len(mesh.boundary_faces)))
    d = closest_point_distances(np.asarray(points)[open_verts],
                                mesh.vertices, btris)
    scale = float(np.linalg.norm(mesh.vertices.max(0) - mesh.vertices.min(0)))
    return bool(np.all(d <= tol_scale * scale))


@pytest.fixture(scope="session")
def cube5():
    return synth.cube_grid(5)


@pytest.fixture(scope="session")
def cube_scene6():
    return synth.cube_scene(6)


@pytest.fixture(scope="session")
def bar_mesh():
    return synth.two_stream_bar()
