import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from extremeseg.errors import DimsTooSmall, OutOfBounds, ZeroVariance
from extremeseg.volume import (BoundingBox, ExtremePoints, Volume3D, bbox_from_extremes, bbox_of_mask,
                               dilate, gradient_magnitude, linear_index, normalize)


def test_normalize_constant_volume_raises():
    with pytest.raises(ZeroVariance):
        normalize(Volume3D(np.full((2, 2, 2), 3.0)))


def test_normalize_two_voxels():
    v = Volume3D(np.array([0.0, 2.0]).reshape(2, 1, 1))
    np.testing.assert_allclose(normalize(v).data.ravel(), [-1.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4, 2), elements=st.floats(-1e3, 1e3)))
def test_normalize_moments_and_idempotence(data):
    v = Volume3D(data)
    if data.std() < 1e-6:
        return
    n = normalize(v)
    assert abs(n.data.mean()) < 1e-6
    assert abs(n.data.var() - 1.0) < 1e-6
    np.testing.assert_allclose(normalize(n).data, n.data, atol=1e-6)


def test_gradient_of_constant_is_zero():
    g = gradient_magnitude(Volume3D(np.full((4, 3, 5), 7.0)))
    assert np.all(g.data == 0)


def test_gradient_linear_ramp():
    x, y, z = np.meshgrid(np.arange(6), np.arange(5), np.arange(4), indexing="ij")
    g = gradient_magnitude(Volume3D(x.astype(float)))
    np.testing.assert_allclose(g.data[1:-1, 1:-1, 1:-1], 1.0)
    g2 = gradient_magnitude(Volume3D((2 * x + 3 * y).astype(float)))
    np.testing.assert_allclose(g2.data[1:-1, 1:-1, 1:-1], np.sqrt(13.0))


def test_gradient_uses_spacing():
    x = np.meshgrid(np.arange(5), np.arange(3), np.arange(3), indexing="ij")[0].astype(float)
    g = gradient_magnitude(Volume3D(x, spacing=(2.0, 1.0, 1.0)))
    np.testing.assert_allclose(g.data, 0.5)


def test_gradient_needs_two_voxels_per_axis():
    with pytest.raises(DimsTooSmall):
        gradient_magnitude(Volume3D(np.zeros((1, 4, 4))))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4, 4, 3), elements=st.floats(-10, 10)))
def test_gradient_nonnegative(data):
    assert np.all(gradient_magnitude(Volume3D(data)).data >= 0)


def test_dilate_center_voxel():
    m = np.zeros((5, 5, 5), np.uint8)
    m[2, 2, 2] = 1
    assert dilate(m, 1).sum() == 7
    # two passes reach the 25-voxel octahedron
    assert dilate(m, 2).sum() == 25


def test_dilate_fixed_points():
    assert dilate(np.zeros((3, 4, 5), np.uint8)).sum() == 0
    assert dilate(np.ones((3, 4, 5), np.uint8)).all()


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, (5, 4, 3), elements=st.integers(0, 1)),
       arrays(np.uint8, (5, 4, 3), elements=st.integers(0, 1)))
def test_dilate_monotone_and_extensive(a, b):
    union = a | b
    da, du = dilate(a), dilate(union)
    assert np.all(da >= a)
    assert np.all(du >= da)


def test_bbox_degenerate():
    p = (3, 1, 2)
    box = bbox_from_extremes(ExtremePoints(p, p, p, p, p, p))
    assert box == BoundingBox(p, p)


def test_bbox_of_cube_extremes():
    e = ExtremePoints((4, 5, 5), (6, 5, 5), (5, 4, 5), (5, 6, 5), (5, 5, 4), (5, 5, 6))
    assert bbox_from_extremes(e) == BoundingBox((4, 4, 4), (6, 6, 6))
    for p in e.points():
        assert bbox_from_extremes(e).contains(p)


def test_extreme_points_validate_bounds():
    e = ExtremePoints((0, 0, 0), (1, 0, 0), (0, 0, 0), (0, 1, 0), (0, 0, 0), (0, 0, 9))
    with pytest.raises(OutOfBounds):
        e.check_inside((4, 4, 4))
    with pytest.raises(ValueError):
        ExtremePoints((3, 0, 0), (1, 0, 0), (0, 0, 0), (0, 1, 0), (0, 0, 0), (0, 0, 1))


def test_extreme_points_json_roundtrip():
    e = ExtremePoints((1, 2, 3), (4, 2, 3), (2, 0, 3), (2, 5, 3), (2, 2, 1), (2, 2, 6))
    assert ExtremePoints.from_dict(e.to_dict()) == e


def test_linear_order_is_x_fastest():
    dims = (3, 4, 5)
    a = np.arange(60).reshape(dims, order="F")
    for p in [(0, 0, 0), (2, 0, 0), (0, 1, 0), (1, 2, 3), (2, 3, 4)]:
        assert a[p] == linear_index(p, dims)


def test_bbox_of_mask():
    m = np.zeros((6, 6, 6), np.uint8)
    m[1:3, 2:5, 4] = 1
    assert bbox_of_mask(m) == BoundingBox((1, 2, 4), (2, 4, 4))
