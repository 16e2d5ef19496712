"""Dense detection maps: target rendering and peak decoding.

Depth is regressed through a camera-aware transform: the network output
``z_o`` maps to metric depth as ``(1/sigmoid(z_o) - 1) * f_x / f_x0``, so the
same output means proportionally larger depth under a longer focal length.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    Box2D,
    Box3D,
    CameraIntrinsics,
    GeometryDomainError,
    observation_angle,
    project_box3d,
    project_point,
    unproject,
    yaw_from_alpha,
)

REGRESSION_HEADS = {"offset": 2, "size2d": 4, "depth": 1, "orient": 2, "dims": 3}
HEADS = ("heatmap",) + tuple(REGRESSION_HEADS)
TWO_D_HEADS = frozenset({"heatmap", "offset", "size2d"})
MIN_EXTENT = 1e-3  # cells; floor for decoded 2D box half-extents


@dataclass(frozen=True)
class CodecConfig:
    stride: int = 4
    f_x0: float = 500.0
    top_k: int = 100
    score_threshold: float = 0.25
    min_overlap: float = 0.7

    def __post_init__(self) -> None:
        if self.stride < 1 or self.top_k < 1:
            raise ValueError("stride and top_k must be >= 1")
        if not self.f_x0 > 0:
            raise ValueError("f_x0 must be positive")
        if not 0 <= self.score_threshold <= 1:
            raise ValueError("score_threshold must lie in [0, 1]")
        if not 0 < self.min_overlap < 1:
            raise ValueError("min_overlap must lie in (0, 1)")


@dataclass
class DenseDetectionMaps:
    """Per-class heatmap plus regression planes on a stride-reduced grid.

    ``index`` holds the class id of the object supervised at each cell and -1
    elsewhere; ``supervised`` names the heads that carry targets.
    ``size2d`` stores distances from the projected 3D center to the left, top,
    right and bottom edges of the 2D box, in cells.
    """

    heatmap: np.ndarray
    offset: np.ndarray
    size2d: np.ndarray
    depth: np.ndarray
    orient: np.ndarray
    dims: np.ndarray
    stride: int
    class_names: tuple[str, ...]
    index: np.ndarray = None
    supervised: frozenset = field(default_factory=lambda: frozenset(HEADS))

    def __post_init__(self) -> None:
        if self.index is None:
            self.index = np.full(self.heatmap.shape[1:], -1, dtype=np.int64)
        self.class_names = tuple(self.class_names)
        self.supervised = frozenset(self.supervised)
        if self.heatmap.shape[0] != len(self.class_names):
            raise ValueError("heatmap channel count must equal the number of classes")

    @classmethod
    def zeros(cls, class_names, height: int, width: int, stride: int) -> "DenseDetectionMaps":
        def planes(n):
            return np.zeros((n, height, width))

        return cls(
            heatmap=planes(len(class_names)),
            stride=stride,
            class_names=tuple(class_names),
            **{name: planes(n) for name, n in REGRESSION_HEADS.items()},
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.heatmap.shape[1:]

    def head(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def copy(self) -> "DenseDetectionMaps":
        return DenseDetectionMaps(
            stride=self.stride,
            class_names=self.class_names,
            index=self.index.copy(),
            supervised=self.supervised,
            **{name: self.head(name).copy() for name in HEADS},
        )

    def supervised_cells(self) -> tuple[np.ndarray, np.ndarray]:
        return np.nonzero(self.index >= 0)


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    box2d: Box2D
    box3d: Box3D
    alpha: float
    cell: tuple[int, int] = (0, 0)  # (row, col) of the heatmap peak


def map_shape(width: int, height: int, stride: int) -> tuple[int, int]:
    return (math.ceil(height / stride), math.ceil(width / stride))


def sigmoid(x):
    """Logistic function, stable for large |x| (no overflow warnings)."""
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out.item() if out.ndim == 0 else out


def depth_decode(z_o, f_x: float, cfg: CodecConfig = CodecConfig()):
    """Metric depth from the raw depth output.

    ``1/sigmoid(z_o) - 1`` equals ``exp(-z_o)`` exactly; the exponential form
    keeps full relative precision at both ends of the range.
    """
    if not f_x > 0:
        raise ValueError("f_x must be positive")
    return np.exp(-np.asarray(z_o, dtype=float)) * f_x / cfg.f_x0


def depth_encode(z, f_x: float, cfg: CodecConfig = CodecConfig()):
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise GeometryDomainError("depth must be positive")
    if not f_x > 0:
        raise ValueError("f_x must be positive")
    # logit(1 / (z * f_x0 / f_x + 1)) == -log(z * f_x0 / f_x)
    return -np.log(z * cfg.f_x0 / f_x)


def gaussian_radius(h_cells: float, w_cells: float, min_overlap: float = 0.7) -> float:
    """Largest center shift keeping IoU >= ``min_overlap`` in all three corner cases.

    The cases are: box translated diagonally by r, box shrunk by r on every
    side, and box grown by r on every side. Each reduces to a quadratic in r;
    the smallest relevant root over the cases is returned.
    """
    if not (h_cells > 0 and w_cells > 0):
        raise ValueError("box size must be positive")
    if not 0 < min_overlap < 1:
        raise ValueError("min_overlap must lie in (0, 1)")
    h, w, m = float(h_cells), float(w_cells), float(min_overlap)
    s, p = h + w, h * w

    # translated: r^2 - s r + p (1-m)/(1+m) = 0, smaller root
    c1 = p * (1 - m) / (1 + m)
    r1 = 2 * c1 / (s + math.sqrt(s * s - 4 * c1))
    # shrunk: 4 r^2 - 2 s r + (1-m) p = 0, smaller root
    c2 = (1 - m) * p
    r2 = 2 * c2 / (2 * s + math.sqrt(4 * s * s - 16 * c2))
    # grown: 4m r^2 + 2 m s r - (1-m) p = 0, positive root
    c3 = (1 - m) * p
    r3 = 2 * c3 / (2 * m * s + math.sqrt(4 * m * m * s * s + 16 * m * c3))
    return max(0.0, min(r1, r2, r3))


def draw_gaussian(plane: np.ndarray, row: int, col: int, radius: float, peak: float = 1.0) -> None:
    """Max-compose a Gaussian (sigma = radius / 3) centered on an integer cell."""
    H, W = plane.shape
    r = int(radius)
    if r == 0:
        plane[row, col] = max(plane[row, col], peak)
        return
    sigma = radius / 3.0
    ys = np.arange(max(0, row - r), min(H, row + r + 1))
    xs = np.arange(max(0, col - r), min(W, col + r + 1))
    g = np.exp(-((ys[:, None] - row) ** 2 + (xs[None, :] - col) ** 2) / (2 * sigma * sigma))
    g[row - ys[0], col - xs[0]] = 1.0
    window = plane[ys[0] : ys[-1] + 1, xs[0] : xs[-1] + 1]
    np.maximum(window, peak * g, out=window)


@dataclass
class EncodeResult:
    maps: DenseDetectionMaps
    skipped: list[int]

    @property
    def skipped_count(self) -> int:
        return len(self.skipped)


def _cell_of(u: float, v: float, stride: int) -> tuple[int, int, float, float]:
    gx, gy = u / stride, v / stride
    col, row = int(math.floor(gx)), int(math.floor(gy))
    return row, col, gx - col, gy - row


def render_peak(
    maps: DenseDetectionMaps,
    class_id: int,
    center_px: tuple[float, float],
    box2d: Box2D,
    min_overlap: float,
    peak: float = 1.0,
) -> tuple[int, int]:
    """Splat one heatmap peak and write its 2D regression targets. Returns (row, col)."""
    s = maps.stride
    u, v = center_px
    row, col, du, dv = _cell_of(u, v, s)
    H, W = maps.shape
    if not (0 <= row < H and 0 <= col < W):
        raise GeometryDomainError("center falls outside the map")
    radius = gaussian_radius(box2d.height / s, box2d.width / s, min_overlap)
    draw_gaussian(maps.heatmap[class_id], row, col, radius, peak)
    maps.offset[:, row, col] = (du, dv)
    maps.size2d[:, row, col] = (
        (u - box2d.left) / s,
        (v - box2d.top) / s,
        (box2d.right - u) / s,
        (box2d.bottom - v) / s,
    )
    maps.index[row, col] = class_id
    return row, col


def encode_frame(
    objects,
    K: CameraIntrinsics,
    cfg: CodecConfig,
    class_names,
    peaks=None,
) -> EncodeResult:
    """Render ground-truth maps for ``objects``, a list of ``(class_id, Box3D)``.

    ``peaks`` optionally overrides the per-object heatmap peak value (1.0 by
    default); the detector simulator uses it to emulate confidence scores.
    Objects whose center projects off the image, or whose box crosses the
    camera plane, are skipped and their indices returned.
    """
    H, W = map_shape(K.width, K.height, cfg.stride)
    maps = DenseDetectionMaps.zeros(class_names, H, W, cfg.stride)
    skipped = []
    for i, (class_id, box) in enumerate(objects):
        try:
            u, v = project_point(K, box.center)
            if not K.contains(u, v):
                raise GeometryDomainError("center off image")
            box2d = project_box3d(K, box)
        except (GeometryDomainError, ValueError):
            skipped.append(i)
            continue
        peak = 1.0 if peaks is None else float(peaks[i])
        row, col = render_peak(maps, class_id, (u, v), box2d, cfg.min_overlap, peak)
        alpha = observation_angle(box.yaw, box.x, box.z)
        maps.depth[0, row, col] = depth_encode(box.z, K.f_x, cfg)
        maps.orient[:, row, col] = (math.sin(alpha), math.cos(alpha))
        maps.dims[:, row, col] = box.dims
    return EncodeResult(maps, skipped)


def find_peaks(heatmap: np.ndarray, threshold: float) -> np.ndarray:
    """Return (class, row, col) triples of 3x3 local maxima scoring >= threshold.

    A cell must be >= its later raster-order neighbours and strictly > its
    earlier ones, so a flat plateau yields exactly one peak.
    """
    C, H, W = heatmap.shape
    padded = np.pad(heatmap, ((0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    keep = heatmap >= threshold
    keep &= heatmap > 0
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[:, 1 + dy : 1 + dy + H, 1 + dx : 1 + dx + W]
            if (dy, dx) < (0, 0):
                keep &= heatmap > nb
            else:
                keep &= heatmap >= nb
    return np.argwhere(keep)


def decode_detections(
    maps: DenseDetectionMaps,
    K: CameraIntrinsics,
    cfg: CodecConfig,
    score_threshold: float | None = None,
) -> list[Detection]:
    thr = cfg.score_threshold if score_threshold is None else score_threshold
    peaks = find_peaks(maps.heatmap, thr)
    if len(peaks) == 0:
        return []
    scores = maps.heatmap[peaks[:, 0], peaks[:, 1], peaks[:, 2]]
    W = maps.shape[1]
    flat_cell = peaks[:, 1] * W + peaks[:, 2]
    order = np.lexsort((flat_cell, peaks[:, 0], -scores))[: cfg.top_k]

    s = maps.stride
    out = []
    for idx in order:
        c, row, col = (int(v) for v in peaks[idx])
        u = (col + maps.offset[0, row, col]) * s
        v = (row + maps.offset[1, row, col]) * s
        z = float(depth_decode(maps.depth[0, row, col], K.f_x, cfg))
        x, y, _ = unproject(K, u, v, z)
        alpha = math.atan2(maps.orient[0, row, col], maps.orient[1, row, col])
        yaw = yaw_from_alpha(alpha, x, z)
        l, t, r, b = (max(e, MIN_EXTENT) * s for e in maps.size2d[:, row, col])
        dims = tuple(float(d) for d in maps.dims[:, row, col])
        box3d = Box3D((x, y, z), tuple(max(d, 1e-6) for d in dims), yaw)
        out.append(
            Detection(
                class_id=c,
                score=float(scores[idx]),
                box2d=Box2D(u - l, v - t, u + r, v + b),
                box3d=box3d,
                alpha=alpha,
                cell=(row, col),
            )
        )
    return out


# --- binary container -------------------------------------------------------

MAGIC = b"MDDM"
VERSION = 1
_HEADER = struct.Struct("<4s6I")


def plane_layout(num_classes: int) -> list[tuple[str, int]]:
    return [("heatmap", num_classes), *REGRESSION_HEADS.items(), ("index", 1)]


def save_maps(maps: DenseDetectionMaps, path, extra: dict | None = None) -> None:
    """Write ``path`` (binary planes) and ``path.json`` (class names, layout, extras).

    Layout: little-endian header ``MDDM``, version, C, H, W, stride, plane
    count (all u32), then row-major float32 planes in ``plane_layout`` order.
    """
    path = Path(path)
    C = len(maps.class_names)
    H, W = maps.shape
    planes = [maps.head(n) for n in HEADS] + [maps.index[None].astype(float)]
    stack = np.concatenate(planes).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, C, H, W, maps.stride, stack.shape[0]))
        fh.write(stack.tobytes(order="C"))
    sidecar = {
        "class_names": list(maps.class_names),
        "planes": [[n, k] for n, k in plane_layout(C)],
        "supervised": sorted(maps.supervised),
    }
    if extra:
        sidecar.update(extra)
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_maps(path) -> tuple[DenseDetectionMaps, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, C, H, W, stride, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = C + sum(REGRESSION_HEADS.values()) + 1
    if n != expected:
        raise ValueError(f"{path}: expected {expected} planes, found {n}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if data.size != n * H * W:
        raise ValueError(f"{path}: payload size mismatch")
    data = data.reshape(n, H, W).astype(float)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    if len(sidecar["class_names"]) != C:
        raise ValueError(f"{path}: sidecar lists {len(sidecar['class_names'])} classes, header {C}")
    heads = {}
    start = 0
    for name, k in plane_layout(C):
        heads[name] = data[start : start + k]
        start += k
    index = heads.pop("index")[0].astype(np.int64)
    maps = DenseDetectionMaps(
        stride=stride,
        class_names=tuple(sidecar["class_names"]),
        index=index,
        supervised=frozenset(sidecar.get("supervised", HEADS)),
        **heads,
    )
    return maps, sidecar
