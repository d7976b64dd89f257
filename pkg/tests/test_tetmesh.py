import numpy as np
import numpy.testing as npt
import pytest

from volpeel import synth
from volpeel.errors import ParseError
from volpeel.tetmesh import (BoundaryTag, TetMesh, load_mesh, save_mesh,
                             tag_boundary_from_surface)

from conftest import random_box_mesh


def test_unit_cube_volume(cube5):
    assert cube5.volumes.min() > 0
    npt.assert_allclose(cube5.volumes.sum(), 1.0, rtol=1e-12)


def test_centroids_match_manual(cube5):
    manual = cube5.vertices[cube5.tets].mean(axis=1)
    npt.assert_allclose(cube5.centroids, manual)


def test_boundary_faces_appear_once(cube5):
    # brute-force face census: boundary faces are exactly those owned by
    # one tet
    from collections import Counter
    faces = Counter()
    for tet in cube5.tets:
        for tri in ([tet[1], tet[2], tet[3]], [tet[0], tet[3], tet[2]],
                    [tet[0], tet[1], tet[3]], [tet[0], tet[2], tet[1]]):
            faces[tuple(sorted(tri))] += 1
    expected = {f for f, c in faces.items() if c == 1}
    got = set()
    for t, lf in cube5.boundary_faces:
        tri = cube5.tets[t, [k for k in range(4) if k != lf]]
        got.add(tuple(sorted(tri.tolist())))
    assert got == expected


def test_face_vectors_sum_to_zero():
    mesh = random_box_mesh(7)
    npt.assert_allclose(mesh.face_vectors.sum(axis=1), 0.0, atol=1e-12)


def test_neighbors_symmetric(cube5):
    nbr = cube5.neighbors
    for t in range(cube5.n_tets):
        for nb in nbr[t]:
            if nb >= 0:
                assert t in nbr[nb]


def test_locate_point(cube5):
    rng = np.random.default_rng(0)
    pts = rng.uniform(0.05, 0.95, size=(20, 3))
    for p in pts:
        t = cube5.locate_point(p)
        # barycentric containment check
        verts = cube5.vertices[cube5.tets[t]]
        mat = np.column_stack([verts[1] - verts[0], verts[2] - verts[0],
                               verts[3] - verts[0]])
        lam = np.linalg.solve(mat, p - verts[0])
        assert lam.min() > -1e-9 and lam.sum() < 1 + 1e-9


def test_node_ele_roundtrip(tmp_path):
    mesh = synth.cube_scene(3)
    save_mesh(mesh, tmp_path / "m")
    back = load_mesh(tmp_path / "m.node")
    npt.assert_allclose(back.vertices, mesh.vertices)
    npt.assert_array_equal(back.tets, mesh.tets)
    npt.assert_array_equal(back.boundary_tags, mesh.boundary_tags)


def test_vtk_roundtrip(tmp_path):
    mesh = random_box_mesh(3)
    save_mesh(mesh, tmp_path / "m.vtk")
    back = load_mesh(tmp_path / "m.vtk")
    npt.assert_allclose(back.vertices, mesh.vertices)
    npt.assert_array_equal(back.tets, mesh.tets)


def test_roundtrip_bit_exact_floats(tmp_path):
    # repr round-trip must preserve doubles exactly
    mesh = random_box_mesh(11)
    save_mesh(mesh, tmp_path / "m")
    back = load_mesh(tmp_path / "m.node")
    assert np.array_equal(back.vertices, mesh.vertices)


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.node"
    p.write_text("this is not a mesh\n")
    with pytest.raises(ParseError):
        load_mesh(p)


def test_tag_boundary_from_surface(cube5):
    # tag the z=0 wall by matching against its triangles
    faces = cube5.boundary_faces
    tris = cube5.boundary_face_vertices(np.arange(len(faces)))
    centers = cube5.vertices[tris].mean(axis=1)
    bottom = np.nonzero(centers[:, 2] < 1e-9)[0]
    tagged = tag_boundary_from_surface(cube5, cube5.vertices, tris[bottom])
    part = tagged.faces_with_tag(BoundaryTag.PART)
    assert set(part.tolist()) == set(bottom.tolist())
    assert len(tagged.faces_with_tag(BoundaryTag.STOCK)) \
        == len(faces) - len(bottom)


def test_with_tags_validates(cube5):
    from volpeel.errors import PeelError
    with pytest.raises(PeelError):
        cube5.with_tags(np.zeros(3, dtype=np.int64))


def test_boundary_vertex_mask(cube5):
    mask = cube5.boundary_vertex_mask
    on_wall = np.any((np.abs(cube5.vertices) < 1e-12)
                     | (np.abs(cube5.vertices - 1) < 1e-12), axis=1)
    npt.assert_array_equal(mask, on_wall)
