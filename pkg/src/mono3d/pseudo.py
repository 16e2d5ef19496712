"""Pseudo-3D supervision from 2D labels.

A pre-trained detector is run at a low score threshold on frames that only
carry 2D boxes. Its detections are matched class by class to the labeled
boxes at minimum total (1 - IoU) cost; matches costing more than ``eps`` are
treated as mis-detections and dropped. Each surviving pair contributes the
labeled 2D box together with the heatmap center taken from the predicted 3D
center, and training on such frames touches only the heatmap and 2D heads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .codec import (
    TWO_D_HEADS,
    CodecConfig,
    DenseDetectionMaps,
    Detection,
    decode_detections,
    map_shape,
    render_peak,
)
from .geometry import Box2D, CameraIntrinsics, GeometryDomainError, iou_2d, project_point
from .matching import min_cost_matching
from .training import joint_loss


@dataclass(frozen=True)
class PseudoConfig:
    low_score_threshold: float = 0.05
    eps: float = 0.5
    cost: str = "iou"

    def __post_init__(self) -> None:
        if not 0 <= self.low_score_threshold <= 1:
            raise ValueError("low_score_threshold must lie in [0, 1]")
        if not 0 <= self.eps <= 1:
            raise ValueError("eps must lie in [0, 1]")
        if self.cost != "iou":
            raise ValueError(f"unsupported cost {self.cost!r}; only 'iou' is implemented")


@dataclass(frozen=True)
class PseudoLabel:
    class_id: int
    gt_box2d: Box2D
    projected_center: tuple[float, float]
    # carried from the prediction for inspection; never supervised
    alpha: float
    depth: float
    dims: tuple[float, float, float]
    cost: float
    pred_idx: int
    gt_idx: int


@dataclass
class MatchReport:
    """Outcome of matching for one frame.

    ``matched`` and ``removed`` hold ``(pred_idx, gt_idx, cost)`` triples;
    ``removed`` are pairs whose cost exceeded eps and ``off_image`` pairs whose
    predicted center projects outside the image. Together with the unmatched
    lists they partition both the predictions and the ground-truth boxes.
    """

    matched: list = field(default_factory=list)
    removed: list = field(default_factory=list)
    off_image: list = field(default_factory=list)
    unmatched_gt: list = field(default_factory=list)
    unmatched_pred: list = field(default_factory=list)
    detections: list = field(default_factory=list, repr=False)

    @property
    def removed_mis_detections(self) -> list[int]:
        return [g for _, g, _ in self.removed]

    def pred_partition(self) -> list[list[int]]:
        return [
            [p for p, _, _ in self.matched],
            [p for p, _, _ in self.removed],
            [p for p, _, _ in self.off_image],
            list(self.unmatched_pred),
        ]

    def gt_partition(self) -> list[list[int]]:
        return [
            [g for _, g, _ in self.matched],
            [g for _, g, _ in self.removed],
            [g for _, g, _ in self.off_image],
            list(self.unmatched_gt),
        ]

    def to_dict(self) -> dict:
        return {
            "matched": [list(t) for t in self.matched],
            "removed_mis_detections": [list(t) for t in self.removed],
            "off_image": [list(t) for t in self.off_image],
            "unmatched_gt": list(self.unmatched_gt),
            "unmatched_pred": list(self.unmatched_pred),
            "num_predictions": len(self.detections),
        }


def iou_cost_matrix(preds, gts) -> np.ndarray:
    cost = np.ones((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            cost[i, j] = 1.0 - iou_2d(p.box2d, g)
    return cost


def match_frame(
    detections: list[Detection],
    gt_boxes,
    K: CameraIntrinsics,
    cfg: PseudoConfig = PseudoConfig(),
) -> tuple[list[PseudoLabel], MatchReport]:
    """Class-wise matching of ``detections`` to labeled ``(class_id, Box2D)`` boxes."""
    report = MatchReport(detections=list(detections))
    labels: list[PseudoLabel] = []
    classes = sorted({d.class_id for d in detections} | {c for c, _ in gt_boxes})
    for c in classes:
        p_idx = [i for i, d in enumerate(detections) if d.class_id == c]
        g_idx = [j for j, (gc, _) in enumerate(gt_boxes) if gc == c]
        cost = iou_cost_matrix([detections[i] for i in p_idx], [gt_boxes[j][1] for j in g_idx])
        pairs = min_cost_matching(cost)
        used_p, used_g = set(), set()
        for pi, gj in pairs:
            i, j = p_idx[pi], g_idx[gj]
            used_p.add(i)
            used_g.add(j)
            c_ij = float(cost[pi, gj])
            if c_ij > cfg.eps:
                report.removed.append((i, j, c_ij))
                continue
            det = detections[i]
            try:
                u, v = project_point(K, det.box3d.center)
            except GeometryDomainError:
                u, v = -1.0, -1.0
            if not K.contains(u, v):
                report.off_image.append((i, j, c_ij))
                continue
            report.matched.append((i, j, c_ij))
            labels.append(
                PseudoLabel(
                    class_id=c,
                    gt_box2d=gt_boxes[j][1],
                    projected_center=(u, v),
                    alpha=det.alpha,
                    depth=det.box3d.z,
                    dims=det.box3d.dims,
                    cost=c_ij,
                    pred_idx=i,
                    gt_idx=j,
                )
            )
        report.unmatched_pred.extend(i for i in p_idx if i not in used_p)
        report.unmatched_gt.extend(j for j in g_idx if j not in used_g)
    for lst in (report.matched, report.removed, report.off_image):
        lst.sort(key=lambda t: t[1])
    report.unmatched_gt.sort()
    report.unmatched_pred.sort()
    labels.sort(key=lambda l: l.gt_idx)
    return labels, report


def generate_pseudo_labels(
    maps: DenseDetectionMaps,
    gt_boxes,
    K: CameraIntrinsics,
    cfg: PseudoConfig = PseudoConfig(),
    codec_cfg: CodecConfig | None = None,
) -> tuple[list[PseudoLabel], MatchReport]:
    codec_cfg = codec_cfg or CodecConfig(stride=maps.stride)
    detections = decode_detections(maps, K, codec_cfg, score_threshold=cfg.low_score_threshold)
    return match_frame(detections, list(gt_boxes), K, cfg)


def rebuild_targets(
    labels,
    image_size: tuple[int, int],
    class_names,
    cfg: CodecConfig = CodecConfig(),
) -> tuple[DenseDetectionMaps, list[int]]:
    """Render heatmap, offset and 2D-box targets from pseudo labels.

    ``image_size`` is (width, height). Returns the maps and the indices of
    labels skipped because their center falls outside the image.
    """
    width, height = image_size
    H, W = map_shape(width, height, cfg.stride)
    maps = DenseDetectionMaps.zeros(class_names, H, W, cfg.stride)
    maps.supervised = TWO_D_HEADS
    skipped = []
    for k, lab in enumerate(labels):
        u, v = lab.projected_center
        if not (0 <= u < width and 0 <= v < height):
            skipped.append(k)
            continue
        render_peak(maps, lab.class_id, (u, v), lab.gt_box2d, cfg.min_overlap)
    return maps, skipped


def pseudo_loss(pred_maps, pseudo_maps, mask, weights: dict | None = None):
    """Selective loss restricted to the heatmap and 2D heads."""
    weights = {h: 1.0 for h in TWO_D_HEADS} if weights is None else dict(weights)
    restricted = {h: w for h, w in weights.items() if h in TWO_D_HEADS}
    return joint_loss(pred_maps, pseudo_maps, mask, restricted)


def labels_to_jsonl(frame: str, labels, class_names) -> str:
    lines = []
    for lab in labels:
        lines.append(
            json.dumps(
                {
                    "frame": frame,
                    "class": class_names[lab.class_id],
                    "gt_box2d": list(lab.gt_box2d.as_tuple()),
                    "center": list(lab.projected_center),
                    "cost": lab.cost,
                },
                sort_keys=True,
            )
        )
    return "".join(line + "\n" for line in lines)


def labels_from_jsonl(text: str, class_names) -> dict[str, list[PseudoLabel]]:
    """Parse pseudo-label lines back into per-frame lists (unsupervised fields zeroed)."""
    out: dict[str, list[PseudoLabel]] = {}
    names = list(class_names)
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        frame_labels = out.setdefault(rec["frame"], [])
        frame_labels.append(
            PseudoLabel(
                class_id=names.index(rec["class"]),
                gt_box2d=Box2D(*rec["gt_box2d"]),
                projected_center=tuple(rec["center"]),
                alpha=0.0,
                depth=0.0,
                dims=(0.0, 0.0, 0.0),
                cost=float(rec["cost"]),
                pred_idx=-1,
                gt_idx=len(frame_labels),
            )
        )
    return out
