"""Invariant checks quantified over random inputs."""

import numpy as np
import numpy.testing as npt
from hypothesis import given, settings, strategies as st

from volpeel import synth
from volpeel.diffops import VectorField, gradient, integrated_divergence
from volpeel.fieldopt import Anchor
from volpeel.geometry import point_triangle_distance, triangle_areas
from volpeel.layers import layer_stations

MESH = synth.cube_grid(4)

finite = st.floats(min_value=-100, max_value=100, allow_nan=False,
                   allow_infinity=False)
unit_range = st.floats(min_value=-1.0, max_value=1.0)


@given(lo=finite, span=st.floats(min_value=1e-3, max_value=50),
       depth_frac=st.floats(min_value=0.05, max_value=1.0))
@settings(max_examples=60)
def test_layer_stations_inside_and_bounded(lo, span, depth_frac):
    hi = lo + span
    depth = depth_frac * span
    st_ = layer_stations(lo, hi, depth=depth)
    assert len(st_) >= 1
    assert lo < st_.min() and st_.max() < hi
    assert np.all(np.diff(st_) > 0)
    if len(st_) > 1:
        assert np.diff(st_).max() <= depth * (1 + 1e-9)
    # gap from either end never exceeds the cutting depth either
    assert st_[0] - lo <= depth * (1 + 1e-9)
    assert hi - st_[-1] <= depth * (1 + 1e-9)


@given(x=finite, y=finite, z=finite)
@settings(max_examples=50)
def test_anchor_direction_is_unit(x, y, z):
    v = np.array([x, y, z])
    if np.linalg.norm(v) < 1e-6:
        return
    a = Anchor(0, v, 1.0)
    npt.assert_allclose(np.linalg.norm(a.direction), 1.0, atol=1e-12)


@given(a=unit_range, b=unit_range, c=unit_range, d=unit_range)
@settings(max_examples=40)
def test_gradient_linear_exactness(a, b, c, d):
    vals = MESH.vertices @ np.array([a, b, c]) + d
    g = gradient(MESH, vals).vectors
    npt.assert_allclose(g, np.broadcast_to([a, b, c], g.shape), atol=1e-11)


@given(s=unit_range, t=unit_range)
@settings(max_examples=30)
def test_divergence_is_linear(s, t):
    rng = np.random.default_rng(7)
    v = rng.normal(size=(MESH.n_tets, 3))
    w = rng.normal(size=(MESH.n_tets, 3))
    lhs = integrated_divergence(MESH, VectorField(s * v + t * w))
    rhs = (s * integrated_divergence(MESH, VectorField(v))
           + t * integrated_divergence(MESH, VectorField(w)))
    npt.assert_allclose(lhs, rhs, atol=1e-10)


@given(px=finite, py=finite, pz=finite)
@settings(max_examples=60)
def test_point_triangle_distance_vs_sampling(px, py, pz):
    a = np.array([0.0, 0.0, 0.0])
    b = np.array([2.0, 0.0, 0.0])
    c = np.array([0.0, 3.0, 0.0])
    p = np.array([px, py, pz])
    d = point_triangle_distance(p, a, b, c)
    # dense barycentric sampling can only overestimate the distance
    u = np.linspace(0, 1, 40)
    uu, vv = np.meshgrid(u, u)
    keep = uu + vv <= 1.0
    pts = (a[None, :] + uu[keep, None] * (b - a)[None, :]
           + vv[keep, None] * (c - a)[None, :])
    sampled = np.linalg.norm(pts - p, axis=1).min()
    assert d <= sampled + 1e-9
    assert d >= 0.0
    # never farther than the nearest corner
    corners = min(np.linalg.norm(p - q) for q in (a, b, c))
    assert d <= corners + 1e-12


@given(scale=st.floats(min_value=1e-3, max_value=1e3))
@settings(max_examples=30)
def test_triangle_area_scaling(scale):
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1.0, 0]]) * scale
    tri = np.array([[0, 1, 2]])
    npt.assert_allclose(triangle_areas(pts, tri)[0], 0.5 * scale ** 2,
                        rtol=1e-12)


@given(iso=st.floats(min_value=0.05, max_value=0.95))
@settings(max_examples=25, deadline=None)
def test_isosurface_points_lie_on_level_set(iso):
    from volpeel.diffops import ScalarField
    from volpeel.layers import extract_isosurface
    vals = MESH.vertices[:, 0] + 0.3 * MESH.vertices[:, 1]
    lo, hi = vals.min(), vals.max()
    value = lo + iso * (hi - lo)
    surf = extract_isosurface(MESH, ScalarField(vals), value)
    got = surf.points[:, 0] + 0.3 * surf.points[:, 1]
    # the nudge against vertex ties moves the plane by <= 1e-9 of range
    npt.assert_allclose(got, value, atol=1e-8)
