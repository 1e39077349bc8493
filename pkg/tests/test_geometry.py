import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hokem import geometry as G
from hokem.geometry import EmptyMaskError, ObjectKeypoints, RasterMask

import masks
from oracles import brute_centroid, brute_extremes, brute_keypoints, brute_ray


def kp(bits):
    return G.extract_object_keypoints(RasterMask(bits)).as_array()


def test_empty_mask_rejected():
    with pytest.raises(EmptyMaskError):
        RasterMask(np.zeros((3, 3), dtype=bool))


def test_centroid_examples():
    assert G.centroid(RasterMask(masks.single())) == (4.0, 7.0)
    assert G.centroid(RasterMask(masks.square())) == (5.0, 5.0)
    assert G.centroid(RasterMask(masks.l_shape())) == pytest.approx(brute_centroid(masks.l_shape()), abs=1e-12)


def test_extreme_points_examples():
    assert G.extreme_points(RasterMask(masks.square())) == ((5, 0), (0, 5), (5, 10), (10, 5))
    assert set(G.extreme_points(RasterMask(masks.single()))) == {(4, 7)}
    assert G.extreme_points(RasterMask(masks.disk())) == ((10, 0), (0, 10), (10, 20), (20, 10))


@pytest.mark.parametrize("name", sorted(masks.FIXTURES))
def test_extremes_match_enumeration(name):
    bits = masks.FIXTURES[name]()
    assert G.extreme_points(RasterMask(bits)) == tuple((float(x), float(y)) for x, y in brute_extremes(bits))


def test_square_intermediate_reaches_corner():
    m = RasterMask(masks.square())
    p = G.intermediate_keypoint(m, (5.0, 5.0), (5.0, 0.0), (0.0, 5.0))
    assert max(abs(p[0]), abs(p[1])) <= 0.5
    q = brute_ray(masks.square(), (5.0, 5.0), (2.5, 2.5))
    assert math.dist(p, q) <= 0.5


def test_square_composed():
    pts = kp(masks.square())
    np.testing.assert_array_equal(pts[:5], [(5, 5), (5, 0), (0, 5), (5, 10), (10, 5)])
    corners = np.array([(0, 0), (0, 10), (10, 10), (10, 0)])
    assert np.abs(pts[5:] - corners).max() <= 0.5


def test_single_pixel_all_equal():
    np.testing.assert_array_equal(kp(masks.single()), np.tile([4.0, 7.0], (9, 1)))


def test_disk_intermediates_on_boundary():
    r, c = 10, np.array([10.0, 10.0])
    pts = kp(masks.disk(r))
    np.testing.assert_allclose(pts[0], c)
    for p, ang in zip(pts[5:], (135, 225, 315, 45)):
        d = np.hypot(*(p - c))
        assert r - 1 <= d <= r + 1
        boundary = c + r * np.array([math.cos(math.radians(ang)), -math.sin(math.radians(ang))])
        assert np.hypot(*(p - boundary)) <= 1.0


def test_bar_collapses_onto_bar():
    pts = kp(masks.bar())
    np.testing.assert_allclose(pts[0], (9.5, 0.0))
    np.testing.assert_array_equal(pts[1], (9, 0))
    np.testing.assert_array_equal(pts[3], (9, 0))
    assert np.abs(pts[5:, 1]).max() <= 0.5
    for p in pts[5:]:
        assert masks.bar()[int(math.floor(p[1] + 0.5)), int(math.floor(p[0] + 0.5))]


@pytest.mark.parametrize("name", sorted(masks.FIXTURES))
def test_keypoints_match_brute_force(name):
    bits = masks.FIXTURES[name]()
    got = kp(bits)
    want = np.array(brute_keypoints(bits))
    assert np.abs(got - want).max() <= 0.5


@pytest.mark.parametrize("name", ["square", "disk", "bar", "single"])
def test_keypoint_pixels_occupied(name):
    bits = masks.FIXTURES[name]()
    m = RasterMask(bits)
    pts = kp(bits)
    assert m.occupied(*pts[0])
    assert all(m.occupied(*p) for p in pts[1:])


def test_l_shape_gravity_outside_falls_back():
    bits = masks.l_shape()
    pts = kp(bits)
    assert not RasterMask(bits).occupied(*pts[0])
    # the bottom/right ray never touches the L, so the midpoint is returned
    np.testing.assert_allclose(pts[7], (4.5, 4.5))


def _embed(bits, dx, dy, pad=0):
    h, w = bits.shape
    out = np.zeros((h + dy + pad, w + dx + pad), dtype=bool)
    out[dy : dy + h, dx : dx + w] = bits
    return out


def _random_mask(seed, kind):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(3, 25, size=2)
    if kind == "rect":
        bits = np.ones((h, w), dtype=bool)
    elif kind == "ellipse":
        yy, xx = np.mgrid[:h, :w]
        bits = ((xx - (w - 1) / 2) / (w / 2)) ** 2 + ((yy - (h - 1) / 2) / (h / 2)) ** 2 <= 1
    else:
        bits = rng.random((h, w)) < 0.6
        bits[h // 2, :] = True
    return bits


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    kind=st.sampled_from(["rect", "ellipse", "blob"]),
    dx=st.integers(0, 300),
    dy=st.integers(0, 300),
)
def test_translation_equivariance_exact(seed, kind, dx, dy):
    bits = _random_mask(seed, kind)
    base = kp(bits)
    moved = kp(_embed(bits, dx, dy))
    np.testing.assert_allclose(moved - base, np.tile([dx, dy], (9, 1)), rtol=0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), kind=st.sampled_from(["rect", "ellipse", "blob"]), pad=st.integers(1, 40))
def test_padding_invariance(seed, kind, pad):
    bits = _random_mask(seed, kind)
    np.testing.assert_array_equal(kp(bits), kp(_embed(bits, 0, 0, pad)))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), kind=st.sampled_from(["rect", "ellipse"]))
def test_convex_angular_order(seed, kind):
    bits = _random_mask(seed, kind)
    pts = kp(bits)
    g = pts[0]
    ring = pts[[1, 5, 2, 6, 3, 7, 4, 8]]  # top, t/l, left, l/b, bottom, b/r, right, r/t
    # image y points down, so this order runs counter-clockwise on screen
    ang = np.arctan2(-(ring[:, 1] - g[1]), ring[:, 0] - g[0])
    steps = np.mod(np.diff(np.append(ang, ang[0])), 2 * np.pi)
    # consecutive points advance by a non-negative turn and the ring wraps exactly once
    assert np.isclose(steps.sum(), 2 * np.pi) or np.allclose(ring, ring[0])


def test_rasterize_polygon_pixel_centres():
    bits = G.rasterize_polygon([[-0.5, -0.5, 10.5, -0.5, 10.5, 10.5, -0.5, 10.5]], 16, 16)
    np.testing.assert_array_equal(bits, masks.square())


def test_rasterize_triangle_against_point_test():
    poly = [1.0, 1.0, 14.0, 3.0, 5.0, 12.0]
    bits = G.rasterize_polygon([poly], 16, 16)
    xs, ys = poly[0::2], poly[1::2]

    def inside(px, py):
        # sign of the cross product against each edge
        s = [(xs[(i + 1) % 3] - xs[i]) * (py - ys[i]) - (ys[(i + 1) % 3] - ys[i]) * (px - xs[i]) for i in range(3)]
        return all(v > 0 for v in s) or all(v < 0 for v in s)

    want = np.array([[inside(x, y) for x in range(16)] for y in range(16)])
    np.testing.assert_array_equal(bits, want)


def test_rle_round_trip_and_column_major():
    bits = masks.l_shape()
    rle = G.encode_rle(bits)
    np.testing.assert_array_equal(G.decode_rle(rle["counts"], rle["size"]), bits)
    # first column: 10 occupied rows after zero leading background
    assert rle["counts"][:2] == [0, 10]


def test_mask_from_segmentation_forms():
    poly = G.mask_from_segmentation([[-0.5, -0.5, 10.5, -0.5, 10.5, 10.5, -0.5, 10.5]], 16, 16)
    rle = G.mask_from_segmentation(G.encode_rle(masks.square()), 16, 16)
    np.testing.assert_array_equal(poly.bits, rle.bits)


def test_object_keypoints_json_round_trip():
    k = G.extract_object_keypoints(RasterMask(masks.disk()))
    assert ObjectKeypoints.from_json(k.to_json()).as_array().tolist() == k.as_array().tolist()
    assert list(k.to_json()) == list(G.KEYPOINT_NAMES)


def test_object_keypoints_arity():
    with pytest.raises(ValueError):
        ObjectKeypoints(((0.0, 0.0),) * 8)
