import numpy as np
import numpy.testing as npt
import pytest

from volpeel import synth
from volpeel.errors import EmptyAnchorSet, NoPartFaces
from volpeel.fieldopt import (DEFAULT_CONFIG, Anchor, AnchorSet,
                              FieldOptConfig, anchor_residual,
                              blend_with_normals, interpolate_field,
                              solve_linear)

from conftest import random_box_mesh


def dense_oracle(mesh, anchors, cfg):
    """Normal-equations solve of the anchored smoothness quadratic,
    assembled densely and independently of the package's sparse path."""
    nt = mesh.n_tets
    L = np.zeros((nt, nt))
    for t in range(nt):
        nbrs = [int(n) for n in mesh.neighbors[t] if n >= 0]
        if not nbrs:
            continue
        L[t, t] = 1.0
        for n in nbrs:
            L[t, n] -= 1.0 / len(nbrs)
    A = (cfg.alpha ** 2) * (L.T @ L)
    rhs = np.zeros((nt, 3))
    for t, a in anchors.effective().items():
        A[t, t] += a.weight ** 2
        rhs[t] += a.weight ** 2 * a.direction
    return np.linalg.solve(A, rhs)


def random_anchor_set(mesh, rng, n=3):
    anchors = AnchorSet()
    tets = rng.choice(mesh.n_tets, size=n, replace=False)
    for i, t in enumerate(tets):
        d = rng.normal(size=3)
        anchors.add_tet(int(t), d, critical=(i == 0))
    return anchors


# Moderate weights keep the normal equations well conditioned
# (kappa ~ beta_critical^2) so two correct solvers agree far below 1e-6;
# the defaults (beta_critical=1e8) put kappa near 1e16 where *any* pair
# of float64 direct solves drifts apart at the 1e-6 level.
ORACLE_CFG = FieldOptConfig(alpha=1.0, beta_general=300.0,
                            beta_critical=2000.0)


@pytest.mark.parametrize("seed", range(10))
def test_solver_matches_dense_oracle(seed):
    # pre-normalization comparison on small instances
    mesh = random_box_mesh(seed, max_cells=3)
    assert mesh.n_tets <= 500
    rng = np.random.default_rng(seed)
    anchors = random_anchor_set(mesh, rng)
    for a in anchors:
        a.weight = ORACLE_CFG.beta_critical if a.critical \
            else ORACLE_CFG.beta_general
    got = solve_linear(mesh, anchors, ORACLE_CFG)
    want = dense_oracle(mesh, anchors, ORACLE_CFG)
    npt.assert_allclose(got, want, atol=1e-6)


def test_solver_default_weights_sanity():
    # at the default (stiff) weights only conditioning-limited agreement
    # is achievable; the anchored rows still pin to the target
    mesh = random_box_mesh(3, max_cells=3)
    rng = np.random.default_rng(3)
    anchors = random_anchor_set(mesh, rng)
    got = solve_linear(mesh, anchors, DEFAULT_CONFIG)
    want = dense_oracle(mesh, anchors, DEFAULT_CONFIG)
    npt.assert_allclose(got, want, atol=1e-4)


def test_interpolate_returns_unit_field():
    mesh = random_box_mesh(21)
    anchors = AnchorSet()
    anchors.add_tet(0, (0, 0, 1))
    f = interpolate_field(mesh, anchors)
    npt.assert_allclose(f.magnitudes(), 1.0, atol=1e-12)
    assert f.normalized


def test_anchored_tets_honor_direction():
    mesh = random_box_mesh(22)
    anchors = AnchorSet()
    anchors.add_tet(3, (1, 0, 0), critical=True)
    anchors.add_tet(10, (1, 0, 0))
    f = interpolate_field(mesh, anchors)
    assert anchor_residual(f, anchors) < 1e-4


def test_constant_anchors_give_constant_field():
    mesh = random_box_mesh(23)
    anchors = AnchorSet()
    for t in (0, mesh.n_tets // 2, mesh.n_tets - 1):
        anchors.add_tet(t, (0, 0, 1))
    f = interpolate_field(mesh, anchors)
    npt.assert_allclose(f.vectors,
                        np.broadcast_to([0.0, 0.0, 1.0], f.vectors.shape),
                        atol=5e-5)


def test_empty_anchor_set_raises():
    mesh = random_box_mesh(24)
    with pytest.raises(EmptyAnchorSet):
        interpolate_field(mesh, AnchorSet())


def test_anchor_normalizes_direction():
    a = Anchor(0, (0, 0, 10), 5.0)
    npt.assert_allclose(a.direction, [0, 0, 1])
    with pytest.raises(ValueError):
        Anchor(0, (0, 0, 0), 1.0)
    with pytest.raises(ValueError):
        Anchor(0, (0, 0, 1), -1.0)


def test_anchorset_later_insertion_wins():
    s = AnchorSet()
    s.add_tet(5, (1, 0, 0))
    s.add_tet(5, (0, 1, 0))
    eff = s.effective()
    npt.assert_allclose(eff[5].direction, [0, 1, 0])
    assert len(s) == 2


def test_anchorset_vertex_fanout(cube5):
    s = AnchorSet()
    ids = s.add_vertex(cube5, 0, (0, 0, 1))
    assert len(ids) == len(cube5.tets_of_vertex(0))
    assert {s._entries[i].tet for i in ids} == set(cube5.tets_of_vertex(0))


def test_anchorset_text_roundtrip(tmp_path):
    s = AnchorSet()
    s.add_tet(2, (0.3, -0.4, 0.5), weight=123.5, critical=True)
    s.add_tet(7, (1, 0, 0))
    path = tmp_path / "anchors.txt"
    s.save(path)
    back = AnchorSet.load(path)
    for (i1, a1), (i2, a2) in zip(s.items(), back.items()):
        assert a1.tet == a2.tet and a1.critical == a2.critical
        # Anchor re-normalizes on load; allow one-ulp drift
        npt.assert_allclose(a1.direction, a2.direction, atol=1e-15)
        assert a1.weight == a2.weight


def test_config_validation():
    with pytest.raises(ValueError):
        FieldOptConfig(alpha=-1)
    with pytest.raises(ValueError):
        FieldOptConfig(beta_general=1e9, beta_critical=1e5)
    cfg = FieldOptConfig.from_dict(FieldOptConfig(alpha=2.0).to_dict())
    assert cfg.alpha == 2.0


def test_blend_with_normals_pulls_near_part():
    mesh = synth.cube_scene(5)            # floor tagged PART, +z into domain
    anchors = AnchorSet()
    anchors.add_tet(0, (1, 0, 0))
    f = interpolate_field(mesh, anchors)  # roughly +x everywhere
    blended = blend_with_normals(f, mesh, 0.5, ring_depth=1)
    floor = mesh.centroids[:, 2] < 1.0 / 10
    moved = np.linalg.norm(blended.vectors - f.vectors, axis=1)
    assert moved[floor].max() > 0.1      # floor ring pulled toward +z
    assert blended.vectors[floor, 2].min() > 0.0
    far = mesh.centroids[:, 2] > 0.5
    npt.assert_allclose(moved[far], 0.0)  # untouched away from the ring


def test_blend_requires_part_faces():
    mesh = synth.cube_grid(3)
    anchors = AnchorSet()
    anchors.add_tet(0, (1, 0, 0))
    f = interpolate_field(mesh, anchors)
    with pytest.raises(NoPartFaces):
        blend_with_normals(f, mesh, 0.5)
