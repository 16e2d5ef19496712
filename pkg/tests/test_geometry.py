import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mono3d.geometry import (
    Box2D,
    Box3D,
    CameraIntrinsics,
    GeometryDomainError,
    bev_iou,
    bev_polygon,
    box3d_corners,
    clip_convex,
    iou_2d,
    iou_3d,
    observation_angle,
    project_box3d,
    project_point,
    unproject,
    wrap_angle,
    yaw_from_alpha,
)

from oracles import monte_carlo_bev_iou

K = CameraIntrinsics(f_x=1000.0, f_y=1000.0, c_x=600.0, c_y=200.0, width=1242, height=375)

angles = st.floats(-50.0, 50.0, allow_nan=False)


def test_wrap_angle_examples():
    assert wrap_angle(1.5 * math.pi) == pytest.approx(-0.5 * math.pi, abs=1e-15)
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(0.3) == 0.3


@given(angles)
def test_wrap_angle_range_and_idempotence(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert wrap_angle(w) == w  # bitwise
    assert math.cos(w) == pytest.approx(math.cos(a), abs=1e-12)
    assert math.sin(w) == pytest.approx(math.sin(a), abs=1e-12)


def test_wrap_rejects_nan():
    with pytest.raises(ValueError):
        wrap_angle(float("nan"))


def test_observation_angle_hand_value():
    # atan(5/5) = pi/4, so alpha = 2 - pi/4
    assert observation_angle(2.0, 5.0, 5.0) == pytest.approx(2.0 - math.pi / 4, abs=1e-15)
    # object straight ahead: alpha equals yaw
    assert observation_angle(0.4, 0.0, 10.0) == 0.4


@given(angles, st.floats(-30, 30), st.floats(0.5, 80))
def test_yaw_alpha_inverse(theta, x, z):
    alpha = observation_angle(theta, x, z)
    assert abs(wrap_angle(yaw_from_alpha(alpha, x, z) - wrap_angle(theta))) < 1e-9


def test_project_point_hand_value():
    # u = 1000 * 1 / 10 + 600, v = 1000 * 0.5 / 10 + 200
    assert project_point(K, (1.0, 0.5, 10.0)) == pytest.approx((700.0, 250.0))


def test_project_behind_camera_raises():
    with pytest.raises(GeometryDomainError):
        project_point(K, (0.0, 0.0, 0.0))
    with pytest.raises(GeometryDomainError):
        unproject(K, 10.0, 10.0, -1.0)


@given(st.floats(0, 1242), st.floats(0, 375), st.floats(0.1, 300))
def test_unproject_round_trip(u, v, z):
    p = unproject(K, u, v, z)
    assert p[2] == z
    uu, vv = project_point(K, p)
    assert uu == pytest.approx(u, abs=1e-9)
    assert vv == pytest.approx(v, abs=1e-9)


def test_corners_axis_aligned():
    # yaw 0: length along x, width along z, bottom face at larger y
    c = box3d_corners(Box3D((0.0, 0.0, 10.0), (2.0, 1.0, 4.0), 0.0))
    assert c.shape == (8, 3)
    assert set(np.round(c[:, 0], 12)) == {-2.0, 2.0}
    assert set(np.round(c[:, 2], 12)) == {9.0, 11.0}
    assert np.all(c[:4, 1] == 0.5) and np.all(c[4:, 1] == -0.5)


def test_bev_polygon_is_counter_clockwise():
    poly = bev_polygon(Box3D((1.0, 0.0, 5.0), (1.6, 1.5, 3.9), 2.2))
    x, y = poly[:, 0], poly[:, 1]
    signed = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    assert signed == pytest.approx(1.6 * 3.9)


def test_iou_2d_hand_values():
    a = Box2D(0, 0, 2, 2)
    assert iou_2d(a, Box2D(1, 0, 3, 2)) == pytest.approx(2 / 6)
    assert iou_2d(a, Box2D(2, 0, 4, 2)) == 0.0  # touching edges
    assert iou_2d(a, a) == 1.0


def test_box2d_rejects_degenerate():
    with pytest.raises(ValueError):
        Box2D(5, 0, 5, 10)


def test_bev_iou_square_rotated_45_degrees():
    # the overlap is a regular octagon; IoU works out to 1/sqrt(2)
    a = Box3D((0.0, 0.0, 10.0), (2.0, 1.0, 2.0), 0.0)
    b = Box3D((0.0, 0.0, 10.0), (2.0, 1.0, 2.0), math.pi / 4)
    assert bev_iou(a, b) == pytest.approx(1 / math.sqrt(2), abs=1e-12)


def test_iou_3d_offset_cubes():
    a = Box3D((0.0, 0.0, 5.0), (1.0, 1.0, 1.0), 0.0)
    b = Box3D((0.5, 0.0, 5.0), (1.0, 1.0, 1.0), 0.0)
    assert iou_3d(a, b) == pytest.approx(1 / 3, abs=1e-12)
    # same footprint, half-height vertical shift
    c = Box3D((0.0, 0.5, 5.0), (1.0, 1.0, 1.0), 0.0)
    assert iou_3d(a, c) == pytest.approx(1 / 3, abs=1e-12)


def test_disjoint_and_touching_boxes():
    a = Box3D((0.0, 0.0, 5.0), (1.0, 1.0, 1.0), 0.0)
    far = Box3D((10.0, 0.0, 5.0), (1.0, 1.0, 1.0), 0.3)
    touch = Box3D((1.0, 0.0, 5.0), (1.0, 1.0, 1.0), 0.0)
    assert bev_iou(a, far) == 0.0
    assert bev_iou(a, touch) == 0.0
    assert iou_3d(a, Box3D((0.0, 3.0, 5.0), (1.0, 1.0, 1.0), 0.0)) == 0.0


boxes = st.builds(
    lambda x, z, w, l, yaw: Box3D((x, 0.0, z), (w, 1.5, l), yaw),
    st.floats(-3, 3),
    st.floats(5, 11),
    st.floats(0.3, 3),
    st.floats(0.3, 5),
    st.floats(-math.pi, math.pi),
)


@given(boxes, boxes)
def test_bev_iou_symmetric_and_bounded(a, b):
    ab, ba = bev_iou(a, b), bev_iou(b, a)
    assert 0.0 <= ab <= 1.0
    assert ab == pytest.approx(ba, abs=1e-12)


@given(boxes)
def test_self_iou_is_one(a):
    assert bev_iou(a, a) == pytest.approx(1.0, abs=1e-12)
    assert iou_3d(a, a) == pytest.approx(1.0, abs=1e-12)


@given(boxes)
def test_half_turn_yaw_is_same_footprint(a):
    flipped = Box3D(a.center, a.dims, a.yaw + math.pi)
    assert bev_iou(a, flipped) == pytest.approx(1.0, abs=1e-9)


def test_clip_convex_square_in_square():
    outer = np.array([[0, 0], [4, 0], [4, 4], [0, 4]], dtype=float)
    inner = np.array([[1, 1], [2, 1], [2, 2], [1, 2]], dtype=float)
    out = clip_convex(inner, outer)
    assert sorted(map(tuple, out)) == sorted(map(tuple, inner))


def test_bev_iou_against_monte_carlo_small():
    rng = np.random.default_rng(11)
    for _ in range(10):
        a = Box3D((rng.uniform(-1, 1), 0, rng.uniform(9, 11)), (rng.uniform(1, 3), 1, rng.uniform(1, 5)), rng.uniform(-3, 3))
        b = Box3D((rng.uniform(-1, 1), 0, rng.uniform(9, 11)), (rng.uniform(1, 3), 1, rng.uniform(1, 5)), rng.uniform(-3, 3))
        assert bev_iou(a, b) == pytest.approx(monte_carlo_bev_iou(a, b, 200_000, rng), abs=6e-3)


def test_project_box3d_contains_center_and_clips():
    box = Box3D((0.0, 0.0, 10.0), (1.6, 1.5, 3.9), 0.5)
    b2 = project_box3d(K, box)
    u, v = project_point(K, box.center)
    assert b2.left < u < b2.right and b2.top < v < b2.bottom
    near = Box3D((0.0, 0.0, 3.0), (1.6, 1.5, 3.9), 0.0)
    clipped = project_box3d(K, near)
    raw = project_box3d(K, near, clip=False)
    assert clipped.left == 0.0 and raw.left < 0.0
    assert clipped.right == 1242.0 and raw.right > 1242.0


def test_project_box3d_behind_camera():
    with pytest.raises(GeometryDomainError):
        project_box3d(K, Box3D((0.0, 0.0, 1.0), (1.6, 1.5, 3.9), math.pi / 2))


@settings(max_examples=50)
@given(st.floats(-10, 10), st.floats(1, 20), st.floats(-math.pi, math.pi))
def test_box3d_normalizes_yaw(x, z, yaw):
    b = Box3D((x, 0, z), (1, 1, 1), yaw + 2 * math.pi)
    assert -math.pi < b.yaw <= math.pi
    assert abs(wrap_angle(b.yaw - yaw)) < 1e-12
