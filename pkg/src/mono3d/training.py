"""Selective losses for joint training on datasets with different label sets.

Each frame carries the class list its source dataset annotates. Heatmap
channels and regression cells for classes outside that list are excluded
from every loss term, so a dataset that never labels trams cannot teach the
model that trams are background.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import HEADS, REGRESSION_HEADS, DenseDetectionMaps
from .geometry import CameraIntrinsics

FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
PROB_CLIP = 1e-6


class ConfigError(ValueError):
    pass


class ClassRegistry:
    """Ordered union of class names; position is the heatmap channel."""

    def __init__(self, names):
        names = tuple(names)
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate class names in {names}")
        if not names:
            raise ConfigError("registry needs at least one class")
        self._names = names
        self._index = {n: i for i, n in enumerate(names)}

    @classmethod
    def from_manifests(cls, manifests) -> "ClassRegistry":
        names: list[str] = []
        for m in manifests:
            names.extend(n for n in sorted(m.annotated_classes) if n not in names)
        return cls(names)

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ConfigError(f"unknown class {name!r}") from None

    def __contains__(self, name) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __eq__(self, other) -> bool:
        return isinstance(other, ClassRegistry) and self._names == other._names

    def __repr__(self) -> str:
        return f"ClassRegistry({list(self._names)!r})"


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    annotated_classes: frozenset
    camera: CameraIntrinsics | None = None
    annotation_level: str = "3D"

    def __post_init__(self) -> None:
        object.__setattr__(self, "annotated_classes", frozenset(self.annotated_classes))
        if not self.annotated_classes:
            raise ConfigError(f"manifest {self.name!r} annotates no classes")
        if self.annotation_level not in ("3D", "2D"):
            raise ConfigError(f"annotation_level must be '3D' or '2D', got {self.annotation_level!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        try:
            camera = None
            if "f_x" in d:
                camera = CameraIntrinsics(
                    f_x=float(d["f_x"]),
                    f_y=float(d["f_y"]),
                    c_x=float(d["c_x"]),
                    c_y=float(d["c_y"]),
                    width=int(d["width"]),
                    height=int(d["height"]),
                )
            return cls(
                name=str(d["name"]),
                annotated_classes=frozenset(d["annotated_classes"]),
                camera=camera,
                annotation_level=d.get("annotation_level", "3D"),
            )
        except KeyError as exc:
            raise ConfigError(f"manifest missing field {exc}") from None

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = {"name": self.name, "annotated_classes": sorted(self.annotated_classes)}
        if self.camera is not None:
            c = self.camera
            d.update(f_x=c.f_x, f_y=c.f_y, c_x=c.c_x, c_y=c.c_y, width=c.width, height=c.height)
        if self.annotation_level != "3D":
            d["annotation_level"] = self.annotation_level
        return d


def class_mask(manifest: DatasetManifest, registry: ClassRegistry) -> np.ndarray:
    unknown = sorted(c for c in manifest.annotated_classes if c not in registry)
    if unknown:
        raise ConfigError(f"manifest {manifest.name!r} names unregistered classes {unknown}")
    return np.array([name in manifest.annotated_classes for name in registry], dtype=bool)


def _check_mask(mask, channels: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (channels,):
        raise ValueError(f"mask length {mask.shape} does not match {channels} channels")
    return mask


def masked_focal_loss(pred: np.ndarray, target: np.ndarray, mask, normalize: bool = True) -> float:
    """Penalty-reduced focal loss over the heatmap channels selected by ``mask``.

    Positives are cells where ``target == 1``. Masked-out channels are never
    read, so their content cannot influence the result.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape or pred.ndim != 3:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    mask = _check_mask(mask, pred.shape[0])
    if not mask.any():
        return 0.0
    p = np.clip(pred[mask], PROB_CLIP, 1 - PROB_CLIP)
    t = target[mask]
    pos = t == 1
    pos_loss = -np.sum(((1 - p) ** FOCAL_ALPHA * np.log(p))[pos])
    neg_loss = -np.sum(((1 - t) ** FOCAL_BETA * p**FOCAL_ALPHA * np.log(1 - p))[~pos])
    total = float(pos_loss + neg_loss)
    if normalize:
        total /= max(1, int(pos.sum()))
    return total


def _check_maps(pred: DenseDetectionMaps, target: DenseDetectionMaps) -> None:
    if pred.stride != target.stride:
        raise ValueError("stride mismatch")
    for name in HEADS:
        if pred.head(name).shape != target.head(name).shape:
            raise ValueError(f"shape mismatch in head {name!r}")


def _active_cells(target: DenseDetectionMaps, mask: np.ndarray):
    rows, cols = target.supervised_cells()
    keep = mask[target.index[rows, cols]]
    return rows[keep], cols[keep]


def head_l1(pred: DenseDetectionMaps, target: DenseDetectionMaps, mask, head: str) -> tuple[float, int]:
    """Sum of absolute errors on one regression head and the number of terms summed."""
    _check_maps(pred, target)
    mask = _check_mask(mask, len(target.class_names))
    rows, cols = _active_cells(target, mask)
    if len(rows) == 0:
        return 0.0, 0
    diff = pred.head(head)[:, rows, cols] - target.head(head)[:, rows, cols]
    return float(np.abs(diff).sum()), diff.size


def masked_regression_loss(pred_maps, target_maps, mask, heads=None) -> float:
    """Mean absolute error over every (cell, channel) term of the chosen heads.

    Only cells supervised in ``target_maps`` whose class is masked in take
    part. By default all regression heads the target supervises are used.
    """
    if heads is None:
        heads = [h for h in REGRESSION_HEADS if h in target_maps.supervised]
    total, count = 0.0, 0
    for h in heads:
        s, n = head_l1(pred_maps, target_maps, mask, h)
        total += s
        count += n
    return total / count if count else 0.0


def head_loss(pred: DenseDetectionMaps, target: DenseDetectionMaps, mask, head: str) -> float:
    if head == "heatmap":
        _check_maps(pred, target)
        return masked_focal_loss(pred.heatmap, target.heatmap, mask)
    s, n = head_l1(pred, target, mask, head)
    return s / n if n else 0.0


def joint_loss(pred, target, mask, weights: dict) -> tuple[float, dict]:
    """Weighted sum of per-head losses.

    Heads with zero weight, or that ``target`` does not supervise, are not
    evaluated and report 0.0.
    """
    for h, w in weights.items():
        if h not in HEADS:
            raise ValueError(f"unknown head {h!r}")
        if w < 0:
            raise ValueError(f"negative weight for head {h!r}")
    _check_maps(pred, target)
    breakdown = {h: 0.0 for h in HEADS}
    total = 0.0
    for h in HEADS:
        w = weights.get(h, 0.0)
        if w == 0 or h not in target.supervised:
            continue
        breakdown[h] = head_loss(pred, target, mask, h)
        total += w * breakdown[h]
    return total, breakdown


DEFAULT_WEIGHTS = {h: 1.0 for h in HEADS}
