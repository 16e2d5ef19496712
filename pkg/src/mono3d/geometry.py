"""Camera geometry and box overlap primitives.

Conventions follow the KITTI camera frame: x right, y down, z forward.
Yaw rotates about the camera y axis; at yaw 0 the box length runs along +x
and its width along z. Angles are radians throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi
AREA_EPS = 1e-9  # m^2; overlaps below this count as empty


class GeometryDomainError(ValueError):
    """Raised for points at or behind the camera plane (z <= 0)."""


def wrap_angle(angle: float) -> float:
    """Map ``angle`` into (-pi, pi]. Values already in range are returned untouched."""
    if -math.pi < angle <= math.pi:
        return float(angle)
    if not math.isfinite(angle):
        raise ValueError(f"cannot wrap non-finite angle {angle}")
    wrapped = math.remainder(angle, TWO_PI)
    return math.pi if wrapped <= -math.pi else wrapped


def _require_front(z: float) -> None:
    if not z > 0:
        raise GeometryDomainError(f"point must lie in front of the camera, got z={z}")


@dataclass(frozen=True)
class CameraIntrinsics:
    f_x: float
    f_y: float
    c_x: float
    c_y: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.f_x > 0 and self.f_y > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.c_x <= self.width and 0 <= self.c_y <= self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.f_x, 0.0, self.c_x], [0.0, self.f_y, self.c_y], [0.0, 0.0, 1.0]]
        )

    def contains(self, u: float, v: float) -> bool:
        return 0 <= u < self.width and 0 <= v < self.height


@dataclass(frozen=True)
class Box2D:
    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self) -> None:
        if not (self.left < self.right and self.top < self.bottom):
            raise ValueError(f"degenerate 2D box {self!r}")

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def height(self) -> float:
        return self.bottom - self.top

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.left, self.top, self.right, self.bottom)


@dataclass(frozen=True)
class Box3D:
    """Cuboid with geometric ``center`` (x, y, z), ``dims`` (w, h, l) and ``yaw``."""

    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float

    def __post_init__(self) -> None:
        center = tuple(float(c) for c in self.center)
        dims = tuple(float(d) for d in self.dims)
        if len(center) != 3 or len(dims) != 3:
            raise ValueError("center and dims need three components")
        if not all(d > 0 for d in dims):
            raise ValueError(f"box dimensions must be positive, got {dims}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def x(self) -> float:
        return self.center[0]

    @property
    def y(self) -> float:
        return self.center[1]

    @property
    def z(self) -> float:
        return self.center[2]

    @property
    def volume(self) -> float:
        w, h, l = self.dims
        return w * h * l


def observation_angle(theta: float, x: float, z: float) -> float:
    """Yaw relative to the viewing ray through the object center."""
    _require_front(z)
    return wrap_angle(theta - math.atan(x / z))


def yaw_from_alpha(alpha: float, x: float, z: float) -> float:
    _require_front(z)
    return wrap_angle(alpha + math.atan(x / z))


def project_point(K: CameraIntrinsics, p) -> tuple[float, float]:
    x, y, z = (float(c) for c in p)
    _require_front(z)
    return (K.f_x * x / z + K.c_x, K.f_y * y / z + K.c_y)


def unproject(K: CameraIntrinsics, u: float, v: float, z: float) -> tuple[float, float, float]:
    _require_front(z)
    return ((u - K.c_x) * z / K.f_x, (v - K.c_y) * z / K.f_y, float(z))


def _rotation_y(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def box3d_corners(b: Box3D) -> np.ndarray:
    """Return the 8 corners as an (8, 3) array.

    Rows 0-3 are the bottom face (larger y), rows 4-7 the top face, both
    ordered counter-clockwise when viewed in the x-z plane.
    """
    w, h, l = b.dims
    xs = np.array([l, l, -l, -l, l, l, -l, -l]) / 2.0
    ys = np.array([h, h, h, h, -h, -h, -h, -h]) / 2.0
    zs = np.array([w, -w, -w, w, w, -w, -w, w]) / 2.0
    local = np.stack([xs, ys, zs])
    return (_rotation_y(b.yaw) @ local).T + np.asarray(b.center)


def bev_polygon(b: Box3D) -> np.ndarray:
    """Footprint of ``b`` in the (x, z) plane as a counter-clockwise (4, 2) array."""
    pts = box3d_corners(b)[:4][:, [0, 2]]
    if _signed_area(pts) < 0:
        pts = pts[::-1]
    return pts


def _signed_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` against convex CCW polygon ``clip``."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp = output
        output = []
        prev = inp[-1]
        s_prev = side(prev)
        for cur in inp:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    output.append(_cross_point(prev, cur, s_prev, s_cur))
                output.append(cur)
            elif s_prev >= 0:
                output.append(_cross_point(prev, cur, s_prev, s_cur))
            prev, s_prev = cur, s_cur
    return np.array(output, dtype=float).reshape(-1, 2)


def _cross_point(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    inter = clip_convex(bev_polygon(a), bev_polygon(b))
    area = abs(_signed_area(inter))
    return area if area >= AREA_EPS else 0.0


def iou_2d(a: Box2D, b: Box2D) -> float:
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def bev_iou(a: Box3D, b: Box3D) -> float:
    area_a = a.dims[0] * a.dims[2]
    area_b = b.dims[0] * b.dims[2]
    if area_a < AREA_EPS or area_b < AREA_EPS:
        return 0.0
    inter = bev_intersection_area(a, b)
    return min(1.0, inter / (area_a + area_b - inter))


def _vertical_overlap(a: Box3D, b: Box3D) -> float:
    top = max(a.y - a.dims[1] / 2, b.y - b.dims[1] / 2)
    bottom = min(a.y + a.dims[1] / 2, b.y + b.dims[1] / 2)
    return max(0.0, bottom - top)


def iou_3d(a: Box3D, b: Box3D) -> float:
    if a.volume < AREA_EPS or b.volume < AREA_EPS:
        return 0.0
    overlap_h = _vertical_overlap(a, b)
    if overlap_h <= 0:
        return 0.0
    inter = bev_intersection_area(a, b) * overlap_h
    return min(1.0, inter / (a.volume + b.volume - inter))


def project_box3d(K: CameraIntrinsics, b: Box3D, clip: bool = True) -> Box2D:
    """Tight 2D box around the projected corners, optionally clipped to the image."""
    corners = box3d_corners(b)
    if np.any(corners[:, 2] <= 0):
        raise GeometryDomainError("box extends behind the camera")
    u = K.f_x * corners[:, 0] / corners[:, 2] + K.c_x
    v = K.f_y * corners[:, 1] / corners[:, 2] + K.c_y
    left, right, top, bottom = u.min(), u.max(), v.min(), v.max()
    if clip:
        left, right = max(left, 0.0), min(right, float(K.width))
        top, bottom = max(top, 0.0), min(bottom, float(K.height))
    return Box2D(float(left), float(top), float(right), float(bottom))
