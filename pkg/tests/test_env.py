import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from shapely.geometry import LineString, Point

from aniso_mfpt.dist import alpha_of_k
from aniso_mfpt.env import (
    AnisotropyField,
    Domain,
    GridSpec,
    SegmentSet,
    anisotropy_from_distance,
    canonical_sign,
    chord,
    distance_direction_from_segments,
    field_to_raster,
    fields_from_raster,
    isotropic_anisotropy,
    radial_anisotropy,
    random_chords,
    raster_to_field,
    rasterize_segments,
    tensor_field,
)


def test_grid_geometry():
    g = GridSpec(5, 3, (0, 2, -1, 1))
    assert g.dx1 == 0.5 and g.dx2 == 1.0
    np.testing.assert_allclose(g.x1, [0, 0.5, 1, 1.5, 2])
    X1, X2 = g.mesh()
    assert X1.shape == (5, 3) and X1[4, 0] == 2 and X2[0, 2] == 1
    with pytest.raises(ValueError):
        GridSpec(2, 5, (0, 1, 0, 1))
    with pytest.raises(ValueError):
        GridSpec(5, 5, (1, 0, 0, 1))


def test_domain_roles_and_containment():
    d = Domain.annulus(0.5, 3.0, inner="reflecting")
    assert d.exit == "outer" and d.boundary == {"inner": "reflecting", "outer": "absorbing"}
    assert d.contains(1.0, 0.0) and not d.contains(0.2, 0.0) and not d.contains(3.0, 0.0)
    assert d.contains(3.0, 0.0, strict=False)
    assert Domain.disk(1.0).exit == "outer"
    assert Domain.annulus(0.5, 3.0).exit == "both"
    r = Domain.rectangle(0, 1, 0, 2, left="reflecting")
    assert r.exit is None and r.contains(0.5, 1.5) and not r.contains(0.0, 1.0)
    with pytest.raises(ValueError):
        Domain.annulus(0.5, 3.0, inner="reflecting", outer="reflecting")
    with pytest.raises(ValueError):
        Domain("disk", R0=1.0, boundary={"inner": "absorbing"})
    with pytest.raises(ValueError):
        Domain.annulus(3.0, 0.5)
    with pytest.raises(ValueError):
        Domain("hexagon", R0=1.0)
    with pytest.raises(ValueError):
        Domain.rectangle(0, 1, 0, 1, top="sticky")


segment_strategy = st.lists(
    st.tuples(*[st.floats(-1.5, 1.5)] * 4).filter(lambda s: math.hypot(s[2] - s[0], s[3] - s[1]) > 1e-3),
    min_size=1, max_size=6,
)


@given(segment_strategy)
@settings(max_examples=30, deadline=None)
def test_distance_matches_shapely(raw):
    segs = SegmentSet(raw)
    grid = GridSpec.square(9)
    ff = distance_direction_from_segments(grid, segs)
    lines = [LineString([(a, b), (c, d)]) for a, b, c, d in raw]
    X1, X2 = grid.mesh()
    for j in range(9):
        for k in range(9):
            p = Point(X1[j, k], X2[j, k])
            assert ff.d[j, k] == pytest.approx(min(ln.distance(p) for ln in lines), abs=1e-12)
    np.testing.assert_allclose(np.linalg.norm(ff.gamma, axis=-1), 1.0)


def test_direction_is_that_of_nearest_segment():
    segs = SegmentSet([[(-1, -0.5), (1, -0.5)], [(0.5, -1), (0.5, 1)]])
    grid = GridSpec.square(5)
    ff = distance_direction_from_segments(grid, segs)
    j = lambda x: int(round((x + 1) / 0.5))  # noqa: E731
    np.testing.assert_allclose(ff.gamma[j(-1.0), j(-0.5)], [1, 0])
    np.testing.assert_allclose(ff.gamma[j(1.0), j(1.0)], [0, 1])
    # (1, -1) is equidistant from both, perpendicular segments: first wins, flagged
    assert ff.flagged[j(1.0), j(-1.0)]
    np.testing.assert_allclose(ff.gamma[j(1.0), j(-1.0)], [1, 0])
    assert not ff.flagged[j(-1.0), j(0.0)]


def test_segment_set_validation():
    assert len(SegmentSet([])) == 0
    assert SegmentSet([[0, 0, 1, 1]]).endpoints.shape == (1, 2, 2)
    with pytest.raises(ValueError):
        SegmentSet([[0, 0, 0, 0]])
    with pytest.raises(ValueError):
        SegmentSet([[0, 0, 1]])
    with pytest.raises(ValueError):
        SegmentSet([[0, 0, np.nan, 1]])
    with pytest.raises(ValueError):
        distance_direction_from_segments(GridSpec.square(5), SegmentSet([]))


@given(arrays(float, (20, 2), elements=st.floats(-1, 1)).filter(lambda a: np.all(np.linalg.norm(a, axis=1) > 1e-6)))
def test_canonical_sign_is_idempotent_and_preserves_axis(v):
    c = canonical_sign(v)
    np.testing.assert_array_equal(canonical_sign(c), c)
    np.testing.assert_allclose(np.abs(c), np.abs(v))
    assert np.all((c[:, 0] > 0) | ((c[:, 0] == 0) & (c[:, 1] >= 0)))


@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6))))
def test_raster_layout_roundtrip(img):
    np.testing.assert_array_equal(field_to_raster(raster_to_field(img)), img)
    f = raster_to_field(img)
    assert f.shape == img.shape[::-1]
    # bottom-left pixel is node (0, 0)
    assert f[0, 0] == img[-1, 0]


@pytest.mark.parametrize("angle", [0.0, 0.3, math.pi / 4, 1.2, math.pi / 2, 2.5])
def test_raster_orientation_recovers_line_direction(angle):
    grid = GridSpec(81, 81, (0, 80, 0, 80))
    segs = SegmentSet([chord((40.0, 40.0), angle, grid.bounds)])
    img = field_to_raster(np.where(rasterize_segments(grid, segs, 0.75), 255, 0)).astype(np.uint8)
    ff = fields_from_raster(img, 128, 5.0)
    target = canonical_sign(np.array([math.cos(angle), math.sin(angle)]))
    near = ff.d < 6
    near[:10] = near[-10:] = False
    near[:, :10] = near[:, -10:] = False
    g = ff.gamma[near]
    cosang = np.abs(g @ target)
    assert np.all(cosang > math.cos(math.radians(6)))
    assert not ff.flagged[near].any()


def test_raster_distance_matches_brute_force_and_bounds_scale():
    rng = np.random.default_rng(1)
    img = (rng.random((12, 9)) > 0.9).astype(np.uint8) * 200
    img[0, 0] = 200
    ff = fields_from_raster(img, 128, 2.0, bounds=(0.0, 16.0, 0.0, 22.0))
    feat = raster_to_field(img >= 128)
    X1, X2 = ff.grid.mesh()
    pts = np.stack([X1[feat], X2[feat]], axis=1)
    brute = np.min(np.hypot(X1[..., None] - pts[:, 0], X2[..., None] - pts[:, 1]), axis=-1)
    np.testing.assert_allclose(ff.d, brute, atol=1e-12)
    assert ff.grid.dx1 == 2.0 and ff.grid.dx2 == 2.0


def test_isolated_pixel_is_flagged():
    img = np.zeros((9, 9), np.uint8)
    img[4, 4] = 255
    ff = fields_from_raster(img, 128)
    assert ff.flagged.all()
    np.testing.assert_allclose(ff.gamma[..., 0], 1.0)
    with pytest.raises(ValueError):
        fields_from_raster(np.zeros((4, 4), np.uint8), 128)


def test_anisotropy_gate():
    d = np.array([[0.0, 0.019], [0.02, 1.0]])
    gamma = np.zeros((2, 2, 2))
    gamma[..., 1] = 1
    a = anisotropy_from_distance(d, gamma, 25.0, 0.02)
    np.testing.assert_array_equal(a.k, [[25, 25], [0, 0]])
    assert a.alpha[0, 0] == pytest.approx(alpha_of_k(25.0))
    with pytest.raises(ValueError):
        anisotropy_from_distance(d, gamma, -1.0, 0.02)


@given(k=st.floats(0, 200), theta=st.floats(0, 2 * math.pi), sign=st.sampled_from([1, -1]),
       sigma=st.floats(0.1, 100), mu=st.floats(0.1, 1e4))
@settings(max_examples=80, deadline=None)
def test_tensor_eigenstructure(k, theta, sign, sigma, mu):
    grid = GridSpec.square(3)
    g = np.array([math.cos(theta), math.sin(theta)])
    aniso = AnisotropyField(grid, np.zeros(grid.shape), np.full(grid.shape, k), np.full(grid.shape, alpha_of_k(k)),
                            np.broadcast_to(g, grid.shape + (2,)).copy(), k, 1.0)
    t = tensor_field(aniso, sigma, mu, sign)
    M = np.array([[t.d11[1, 1], t.d12[1, 1]], [t.d12[1, 1], t.d22[1, 1]]])
    a = sign * alpha_of_k(k)
    s = sigma * sigma / mu
    np.testing.assert_allclose(M @ g, s * (1 + a) / 2 * g, rtol=1e-10, atol=1e-12 * s)
    perp = np.array([-g[1], g[0]])
    np.testing.assert_allclose(M @ perp, s * (1 - a) / 2 * perp, rtol=1e-10, atol=1e-12 * s)
    assert t.trace()[1, 1] == pytest.approx(s)
    assert t.determinant()[1, 1] > 0


def test_radial_field_is_isotropic_at_origin():
    grid = GridSpec.square(5)
    t = tensor_field(radial_anisotropy(grid, 3.0), 1.0, 1.0, -1)
    assert t.d11[2, 2] == t.d22[2, 2] == 0.5 and t.d12[2, 2] == 0
    a = float(alpha_of_k(3.0))
    # at (1, 0) the circular orientation suppresses the x1 component
    assert t.d11[4, 2] == pytest.approx((1 - a) / 2)
    iso = tensor_field(isotropic_anisotropy(grid), 2.0, 4.0)
    np.testing.assert_allclose(iso.d11, 0.5)
    with pytest.raises(ValueError):
        tensor_field(isotropic_anisotropy(grid), 1.0, 1.0, 0)


@given(px=st.floats(-0.9, 0.9), py=st.floats(-0.9, 0.9), angle=st.floats(0, math.pi))
def test_chord_endpoints_lie_on_rectangle(px, py, angle):
    (a1, a2), (b1, b2) = chord((px, py), angle, (-1, 1, -1, 1))
    for x, y in ((a1, a2), (b1, b2)):
        assert max(abs(x), abs(y)) == pytest.approx(1.0, abs=1e-12)
    # the line passes through the given point
    cross = (b1 - a1) * (py - a2) - (b2 - a2) * (px - a1)
    assert abs(cross) < 1e-9


def test_random_chords_reproducible():
    a = random_chords(10, (-1, 1, -1, 1), np.random.default_rng(0))
    b = random_chords(10, (-1, 1, -1, 1), np.random.default_rng(0))
    assert len(a) == 10
    np.testing.assert_array_equal(a.endpoints, b.endpoints)
    with pytest.raises(ValueError):
        chord((5.0, 5.0), 0.0, (-1, 1, -1, 1))


def test_rotated_segments_keep_length():
    s = SegmentSet([[0, 0, 1, 0]]).rotated(math.pi / 2)
    np.testing.assert_allclose(s.endpoints[0, 1], [0, 1], atol=1e-15)
    np.testing.assert_allclose(s.directions(), [[0, 1]], atol=1e-15)
