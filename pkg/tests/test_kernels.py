import numpy as np
import numpy.testing as npt
import pytest

from volpeel import kernels
from volpeel import synth

from conftest import random_box_mesh

BACKENDS = kernels.backends()
HAVE_COMPILED = "compiled" in BACKENDS

needs_compiled = pytest.mark.skipif(
    not HAVE_COMPILED, reason="compiled extension not built")


def test_backend_selected_is_known():
    assert kernels.BACKEND in ("pure", "fast")


@needs_compiled
@pytest.mark.parametrize("seed", range(4))
def test_stiffness_triplets_identical(seed):
    mesh = random_box_mesh(seed)
    out = {}
    for name, mod in BACKENDS.items():
        out[name] = mod.stiffness_triplets(mesh.tets, mesh.face_vectors,
                                           mesh.volumes)
    r_p, c_p, v_p = out["pure"]
    r_f, c_f, v_f = out["compiled"]
    npt.assert_array_equal(r_p, r_f)
    npt.assert_array_equal(c_p, c_f)
    # einsum vs scalar-loop accumulation differ by rounding only
    npt.assert_allclose(v_p, v_f, rtol=1e-12, atol=1e-15)


@needs_compiled
@pytest.mark.parametrize("seed", range(4))
def test_divergence_identical(seed):
    mesh = random_box_mesh(seed + 10)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(mesh.n_tets, 3))
    d_p = BACKENDS["pure"].divergence(mesh.tets, mesh.face_vectors, v,
                                      mesh.n_vertices)
    d_f = BACKENDS["compiled"].divergence(mesh.tets, mesh.face_vectors, v,
                                          mesh.n_vertices)
    npt.assert_allclose(d_p, d_f, rtol=1e-13, atol=1e-15)


@needs_compiled
@pytest.mark.parametrize("seed", range(4))
def test_marching_tets_identical(seed):
    mesh = random_box_mesh(seed + 20)
    rng = np.random.default_rng(seed)
    vals = mesh.vertices @ rng.normal(size=3) + 0.1 * rng.normal(
        size=mesh.n_vertices)
    iso = float(np.quantile(vals, 0.5))
    p_p, t_p, s_p = BACKENDS["pure"].marching_tets(mesh.vertices, mesh.tets,
                                                   vals, iso)
    p_f, t_f, s_f = BACKENDS["compiled"].marching_tets(mesh.vertices,
                                                       mesh.tets, vals, iso)
    npt.assert_array_equal(t_p, t_f)
    npt.assert_array_equal(s_p, s_f)
    npt.assert_allclose(p_p, p_f, rtol=1e-14, atol=1e-15)


@needs_compiled
def test_marching_tets_empty_case():
    mesh = synth.cube_grid(2)
    vals = mesh.vertices[:, 2]
    for mod in BACKENDS.values():
        p, t, s = mod.marching_tets(mesh.vertices, mesh.tets, vals, 5.0)
        assert len(p) == 0 and len(t) == 0 and len(s) == 0


def test_pure_backend_forced_by_env():
    # VOLPEEL_NO_EXT must reroute the dispatcher to the numpy backend
    import subprocess
    import sys
    code = ("import volpeel.kernels as k; print(k.BACKEND)")
    out = subprocess.run([sys.executable, "-c", code],
                         env={"VOLPEEL_NO_EXT": "1", "PATH": "/usr/bin:/bin"},
                         capture_output=True, text=True)
    assert out.stdout.strip() == "pure"


def test_marching_tets_welds_shared_edges():
    mesh = synth.cube_grid(3)
    vals = mesh.vertices[:, 2]
    p, t, s = kernels.marching_tets(mesh.vertices, mesh.tets, vals, 0.42)
    # welded points are unique
    keys = {tuple(row) for row in np.round(p, 12).tolist()}
    assert len(keys) == len(p)
    assert t.max() < len(p)
