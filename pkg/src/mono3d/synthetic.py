"""Seeded synthetic scenes and a noisy stand-in for a pre-trained detector.

Every frame draws from its own random stream derived from ``(seed, index)``,
so frames can be generated in any order or in parallel with identical
results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .codec import CodecConfig, DenseDetectionMaps, encode_frame, find_peaks, map_shape
from .geometry import (
    Box2D,
    Box3D,
    CameraIntrinsics,
    GeometryDomainError,
    iou_2d,
    project_box3d,
    project_point,
    unproject,
)

DEFAULT_DIMS = {
    # (w, h, l) ranges in meters
    "Car": ((1.5, 1.9), (1.4, 1.7), (3.5, 4.6)),
    "Pedestrian": ((0.5, 0.8), (1.5, 1.9), (0.5, 1.0)),
    "Cyclist": ((0.5, 0.8), (1.6, 1.9), (1.5, 1.9)),
}


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    num_objects: tuple[int, int] = (1, 8)
    class_names: tuple[str, ...] = ("Car", "Pedestrian", "Cyclist")
    class_weights: tuple[float, ...] = (0.6, 0.25, 0.15)
    depth_range: tuple[float, float] = (5.0, 50.0)
    dims: dict = field(default_factory=lambda: dict(DEFAULT_DIMS))
    image_size: tuple[int, int] = (1242, 375)
    fx_range: tuple[float, float] = (500.0, 1500.0)
    stride: int = 4
    max_retries: int = 200

    def __post_init__(self) -> None:
        lo, hi = self.num_objects
        if not 0 <= lo <= hi:
            raise ValueError("num_objects must be an ordered non-negative range")
        if not 0 < self.depth_range[0] <= self.depth_range[1]:
            raise ValueError("depth range must be positive and ordered")
        if not 0 < self.fx_range[0] <= self.fx_range[1]:
            raise ValueError("fx range must be positive and ordered")
        if len(self.class_weights) != len(self.class_names):
            raise ValueError("one weight per class required")
        missing = [c for c in self.class_names if c not in self.dims]
        if missing:
            raise ValueError(f"no dimension ranges for {missing}")


@dataclass(frozen=True)
class NoiseConfig:
    center_sigma: float = 0.0  # meters, lateral (x, y)
    depth_sigma: float = 0.0  # relative
    yaw_sigma: float = 0.0  # radians
    dims_sigma: float = 0.0  # relative
    drop_prob: float = 0.0
    fp_rate: float = 0.0  # expected false positives per frame
    mislocalize_prob: float = 0.0
    tp_score: tuple[float, float] = (1.0, 1.0)
    fp_score: tuple[float, float] = (0.05, 0.4)
    fp_max_iou: float = 0.5  # against same-class ground truth
    mislocalize_iou: tuple[float, float] = (0.1, 0.4)
    max_retries: int = 50

    def __post_init__(self) -> None:
        for name in ("center_sigma", "depth_sigma", "yaw_sigma", "dims_sigma", "fp_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("drop_prob", "mislocalize_prob", "fp_max_iou"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        for lo, hi in (self.tp_score, self.fp_score, self.mislocalize_iou):
            if not 0 <= lo <= hi <= 1:
                raise ValueError("score and IoU ranges must be ordered within [0, 1]")


NOISE_PROFILES = {
    "zero": NoiseConfig(),
    "default": NoiseConfig(
        center_sigma=0.1,
        depth_sigma=0.03,
        yaw_sigma=0.05,
        dims_sigma=0.03,
        drop_prob=0.05,
        fp_rate=1.0,
        mislocalize_prob=0.05,
        tp_score=(0.5, 1.0),
    ),
    "corrupt": NoiseConfig(fp_rate=3.0, mislocalize_prob=0.2, tp_score=(0.5, 1.0)),
}


def frame_rng(seed: int, index: int) -> np.random.Generator:
    """PCG64 stream for one frame, keyed by counter so frames are independent."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _cell(K: CameraIntrinsics, box: Box3D, stride: int) -> tuple[int, int]:
    u, v = project_point(K, box.center)
    return int(math.floor(v / stride)), int(math.floor(u / stride))


def _sample_dims(rng, ranges) -> tuple[float, float, float]:
    return tuple(float(rng.uniform(lo, hi)) for lo, hi in ranges)


def _far_enough(cell, cells) -> bool:
    return all(max(abs(cell[0] - r), abs(cell[1] - c)) >= 2 for r, c in cells)


def _sample_camera(cfg: SceneConfig, rng) -> CameraIntrinsics:
    width, height = cfg.image_size
    fx = float(rng.uniform(*cfg.fx_range))
    return CameraIntrinsics(fx, fx, width / 2.0, height / 2.0, width, height)


def generate_scene(cfg: SceneConfig, index: int = 0):
    """Return ``(K, [(class_id, Box3D), ...])`` for frame ``index``.

    Objects are fully in front of the camera, their centers project inside
    the image, and their peak cells are at least two cells apart so each one
    stays a separate heatmap maximum.
    """
    rng = frame_rng(cfg.seed, index)
    K = _sample_camera(cfg, rng)
    width, height = cfg.image_size
    weights = np.asarray(cfg.class_weights, dtype=float)
    weights = weights / weights.sum()
    count = int(rng.integers(cfg.num_objects[0], cfg.num_objects[1] + 1))
    objects, cells = [], []
    for _ in range(count):
        for _attempt in range(cfg.max_retries):
            cid = int(rng.choice(len(cfg.class_names), p=weights))
            dims = _sample_dims(rng, cfg.dims[cfg.class_names[cid]])
            z = float(rng.uniform(*cfg.depth_range))
            u = float(rng.uniform(0, width))
            v = float(rng.uniform(0, height))
            yaw = float(rng.uniform(-math.pi, math.pi))
            box = Box3D(unproject(K, u, v, z), dims, yaw)
            try:
                project_box3d(K, box)
            except (GeometryDomainError, ValueError):
                continue
            cell = _cell(K, box, cfg.stride)
            if not K.contains(u, v) or not _far_enough(cell, cells):
                continue
            objects.append((cid, box))
            cells.append(cell)
            break
        else:
            raise SceneGenerationError(f"could not place object after {cfg.max_retries} attempts")
    return K, objects


@dataclass(frozen=True)
class SimObject:
    """One detector output before rendering.

    ``kind`` is ``"true"``, ``"mislocalized"`` or ``"fp"``; ``source`` is the
    index of the scene object it came from (-1 for false positives).
    """

    kind: str
    class_id: int
    box: Box3D
    score: float
    source: int


def _peaks_intact(sim: list[SimObject], K, cfg: CodecConfig, class_names) -> bool:
    res = encode_frame([(o.class_id, o.box) for o in sim], K, cfg, class_names, [o.score for o in sim])
    if res.skipped:
        return False
    expected = {(o.class_id, *_cell(K, o.box, cfg.stride)) for o in sim}
    if len(expected) != len(sim):
        return False
    found = {tuple(int(x) for x in p) for p in find_peaks(res.maps.heatmap, 0.0)}
    return found == expected


def _try_box(K, box) -> Box2D | None:
    try:
        u, v = project_point(K, box.center)
        if not K.contains(u, v):
            return None
        return project_box3d(K, box)
    except (GeometryDomainError, ValueError):
        return None


def _accept(candidate: SimObject, accepted: list[SimObject], K, cfg, class_names) -> bool:
    cell = _cell(K, candidate.box, cfg.stride)
    if not _far_enough(cell, [_cell(K, o.box, cfg.stride) for o in accepted]):
        return False
    return _peaks_intact(accepted + [candidate], K, cfg, class_names)


def _jitter(box: Box3D, noise: NoiseConfig, rng) -> Box3D:
    x, y, z = box.center
    x += rng.normal(0, noise.center_sigma) if noise.center_sigma else 0.0
    y += rng.normal(0, noise.center_sigma) if noise.center_sigma else 0.0
    z *= 1.0 + (rng.normal(0, noise.depth_sigma) if noise.depth_sigma else 0.0)
    yaw = box.yaw + (rng.normal(0, noise.yaw_sigma) if noise.yaw_sigma else 0.0)
    dims = tuple(
        d * (1.0 + (rng.normal(0, noise.dims_sigma) if noise.dims_sigma else 0.0)) for d in box.dims
    )
    return Box3D((x, y, max(z, 1e-3)), tuple(max(d, 1e-3) for d in dims), yaw)


def _mislocalize(box: Box3D, K, noise: NoiseConfig, rng, cid_boxes) -> Box3D | None:
    gt2d = project_box3d(K, box)
    for _ in range(noise.max_retries):
        target = float(rng.uniform(*noise.mislocalize_iou))
        shift_px = gt2d.width * (1 - target) / (1 + target)
        shift_px *= 1 if rng.random() < 0.5 else -1
        x, y, z = box.center
        moved = replace(box, center=(x + shift_px * z / K.f_x, y, z))
        b2 = _try_box(K, moved)
        if b2 is None:
            continue
        own = iou_2d(b2, gt2d)
        lo, hi = noise.mislocalize_iou
        if not (lo * 0.5 <= own <= min(hi + 0.05, 0.49)):
            continue
        if any(iou_2d(b2, g) >= 0.5 for g in cid_boxes):
            continue
        return moved
    return None


def perturb_scene(objects, K, noise: NoiseConfig, cfg: CodecConfig, class_names, rng, scene_cfg: SceneConfig | None = None):
    """Turn ground truth into simulated detector outputs.

    Drop decisions and scores are drawn up front so every placement check
    can reserve the cells of objects not yet processed.
    """
    gt2d = [project_box3d(K, b) for _, b in objects]
    n = len(objects)
    lo, hi = noise.tp_score
    scores = [float(rng.uniform(lo, hi)) if lo < hi else lo for _ in range(n)]
    kept = [not (noise.drop_prob and rng.random() < noise.drop_prob) for _ in range(n)]
    jittering = bool(noise.center_sigma or noise.depth_sigma or noise.yaw_sigma or noise.dims_sigma)

    sim: list[SimObject] = []
    for idx, (cid, box) in enumerate(objects):
        if not kept[idx]:
            continue
        reserved = [
            SimObject("true", objects[j][0], objects[j][1], scores[j], j) for j in range(idx + 1, n) if kept[j]
        ]
        context = sim + reserved
        if noise.mislocalize_prob and rng.random() < noise.mislocalize_prob:
            others = [gt2d[j] for j, (c, _) in enumerate(objects) if c == cid and j != idx]
            moved = _mislocalize(box, K, noise, rng, others)
            if moved is not None:
                cand = SimObject("mislocalized", cid, moved, scores[idx], idx)
                if _accept(cand, context, K, cfg, class_names):
                    sim.append(cand)
                    continue
        chosen = SimObject("true", cid, box, scores[idx], idx)
        if jittering:
            for _ in range(noise.max_retries):
                cand = SimObject("true", cid, _jitter(box, noise, rng), scores[idx], idx)
                if _try_box(K, cand.box) is not None and _accept(cand, context, K, cfg, class_names):
                    chosen = cand
                    break
        sim.append(chosen)

    if noise.fp_rate:
        scene_cfg = scene_cfg or SceneConfig(image_size=(K.width, K.height), class_names=tuple(class_names))
        weights = np.asarray(scene_cfg.class_weights, dtype=float)
        weights = weights / weights.sum()
        for _ in range(int(rng.poisson(noise.fp_rate))):
            for _attempt in range(noise.max_retries):
                cid = int(rng.choice(len(scene_cfg.class_names), p=weights))
                dims = _sample_dims(rng, scene_cfg.dims[scene_cfg.class_names[cid]])
                z = float(rng.uniform(*scene_cfg.depth_range))
                u = float(rng.uniform(0, K.width))
                v = float(rng.uniform(0, K.height))
                box = Box3D(unproject(K, u, v, z), dims, float(rng.uniform(-math.pi, math.pi)))
                b2 = _try_box(K, box)
                if b2 is None:
                    continue
                if any(iou_2d(b2, gt2d[j]) >= noise.fp_max_iou for j, (c, _) in enumerate(objects) if c == cid):
                    continue
                cand = SimObject("fp", cid, box, float(rng.uniform(*noise.fp_score)), -1)
                if _accept(cand, sim, K, cfg, class_names):
                    sim.append(cand)
                    break
    return sim


def simulate_detector(objects, K, noise: NoiseConfig, cfg: CodecConfig, class_names, rng) -> DenseDetectionMaps:
    sim = perturb_scene(objects, K, noise, cfg, class_names, rng)
    return render_simulation(sim, K, cfg, class_names)


def render_simulation(sim, K, cfg: CodecConfig, class_names) -> DenseDetectionMaps:
    res = encode_frame([(o.class_id, o.box) for o in sim], K, cfg, class_names, [o.score for o in sim])
    return res.maps


@dataclass
class SimFrame:
    index: int
    K: CameraIntrinsics
    objects: list
    gt_boxes: list  # (class_id, Box2D) labels the 2D-only dataset would provide
    sim: list
    maps: DenseDetectionMaps

    def cell_kinds(self, stride: int) -> dict:
        """Map each rendered peak cell to the SimObject drawn there."""
        return {_cell(self.K, o.box, stride): o for o in self.sim}


def simulate_frame(scene_cfg: SceneConfig, noise: NoiseConfig, codec_cfg: CodecConfig, index: int) -> SimFrame:
    K, objects = generate_scene(scene_cfg, index)
    # detector noise uses its own stream so the scene is independent of the noise profile
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(scene_cfg.seed, spawn_key=(index, 1)))
    )
    sim = perturb_scene(objects, K, noise, codec_cfg, scene_cfg.class_names, rng, scene_cfg)
    maps = render_simulation(sim, K, codec_cfg, scene_cfg.class_names)
    gt_boxes = [(cid, project_box3d(K, b)) for cid, b in objects]
    return SimFrame(index, K, objects, gt_boxes, sim, maps)


def map_dims(scene_cfg: SceneConfig) -> tuple[int, int]:
    return map_shape(*scene_cfg.image_size, scene_cfg.stride)
