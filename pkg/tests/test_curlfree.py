import numpy as np
import numpy.testing as npt

from volpeel import synth
from volpeel.curlfree import IROT_THRESHOLD, remove_curl
from volpeel.diffops import NATURAL, gradient, i_rot, solve_poisson
from volpeel.fieldopt import AnchorSet, interpolate_field

from conftest import random_box_mesh


def test_consistent_anchors_converge_immediately():
    mesh = random_box_mesh(31)
    anchors = AnchorSet()
    anchors.add_tet(0, (0, 0, 1), critical=True)
    anchors.add_tet(mesh.n_tets - 1, (0, 0, 1))
    field = interpolate_field(mesh, anchors)
    rep = remove_curl(mesh, field, anchors)
    assert rep.converged
    assert rep.iterations <= 3
    assert rep.i_rot_history[-1] <= IROT_THRESHOLD
    assert len(rep.zero_gradient_flags) == 0


def test_final_irot_matches_recomputation():
    mesh = random_box_mesh(32)
    anchors = AnchorSet()
    anchors.add_tet(2, (0.2, 0.1, 1.0))
    anchors.add_tet(mesh.n_tets // 2, (0, 0, 1))
    field = interpolate_field(mesh, anchors)
    rep = remove_curl(mesh, field, anchors)
    # the reported history tail must equal an independent i_rot of the
    # returned field
    fresh = i_rot(mesh, rep.final_field)
    npt.assert_allclose(fresh, rep.i_rot_history[-1], rtol=1e-9, atol=1e-14)


def test_final_scalar_is_poisson_of_final_field():
    mesh = random_box_mesh(33)
    anchors = AnchorSet()
    anchors.add_tet(1, (0, 0.3, 1.0))
    field = interpolate_field(mesh, anchors)
    rep = remove_curl(mesh, field, anchors)
    g = solve_poisson(mesh, rep.final_field, NATURAL)
    npt.assert_allclose(rep.final_scalar.values, g.values, atol=1e-10)


def test_history_one_entry_per_iteration_and_callback():
    import pytest
    mesh = random_box_mesh(34)
    anchors = AnchorSet()
    anchors.add_tet(0, (1, 0, 0), critical=True)
    anchors.add_tet(mesh.n_tets - 1, (0.4, 0.2, 0.9), critical=True)
    field = interpolate_field(mesh, anchors)
    seen = []
    # skew criticals on a tiny mesh never settle; non-convergence must be
    # reported loudly, not masked
    with pytest.warns(UserWarning, match="did not converge"):
        rep = remove_curl(mesh, field, anchors, max_iters=25,
                          on_iteration=lambda k, v: seen.append((k, v)))
    assert not rep.converged
    assert len(rep.i_rot_history) == rep.iterations == len(seen)
    npt.assert_allclose([v for _, v in seen], rep.i_rot_history)
    assert [k for k, _ in seen] == list(range(1, rep.iterations + 1))


def test_conflicting_anchors_history_decreases():
    # two opposed critical anchors force real curl-removal work
    mesh = synth.cube_grid(8)
    anchors = AnchorSet()
    lo = mesh.locate_point([0.3, 0.5, 0.5])
    hi = mesh.locate_point([0.7, 0.5, 0.5])
    anchors.add_tet(lo, (0, 0, 1), critical=True)
    anchors.add_tet(hi, (0, np.sin(1.9), np.cos(1.9)), critical=True)
    for t in np.nonzero(mesh.centroids[:, 2] < 1.0 / 8)[0][::4]:
        anchors.add_tet(int(t), (0, 0, 1))
    field = interpolate_field(mesh, anchors)
    import warnings
    with warnings.catch_warnings():
        # only the decreasing trend matters here, not convergence
        warnings.simplefilter("ignore", UserWarning)
        rep = remove_curl(mesh, field, anchors, max_iters=30)
    assert rep.i_rot_history[-1] < rep.i_rot_history[0]
    assert rep.iterations >= 2


def test_normalized_output():
    mesh = random_box_mesh(36)
    anchors = AnchorSet()
    anchors.add_tet(0, (0, 1, 1))
    field = interpolate_field(mesh, anchors)
    rep = remove_curl(mesh, field, anchors)
    npt.assert_allclose(rep.final_field.magnitudes(), 1.0, atol=1e-9)


def test_history_dict_is_json_ready():
    import json
    mesh = random_box_mesh(37)
    anchors = AnchorSet()
    anchors.add_tet(0, (0, 0, 1))
    field = interpolate_field(mesh, anchors)
    rep = remove_curl(mesh, field, anchors)
    d = rep.history_dict()
    json.dumps(d)
    assert [e["iteration"] for e in d] == list(range(1, rep.iterations + 1))
    npt.assert_allclose([e["i_rot"] for e in d], rep.i_rot_history)
    assert rep.converged is True
