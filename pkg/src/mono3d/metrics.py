"""KITTI AP40 and Cityscapes-3D style detection metrics.

Predictions and ground truth are both ``ObjectAnnotation`` lists keyed by
frame id; predictions carry a ``score``.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass

import numpy as np

from .geometry import bev_iou, iou_2d, iou_3d
from .kitti import DONTCARE, MissingAnnotationError, ObjectAnnotation

RECALL_POSITIONS = tuple(i / 40 for i in range(1, 41))
MODES = ("2D", "BEV", "3D")
KITTI_IOU = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
# rows of these classes are neither positives nor false-positive targets
NEIGHBOR_CLASSES = {"Car": {"Van"}, "Pedestrian": {"Person_sitting"}}
BEV_DISTANCE_MAX = 10.0  # meters


class Band(enum.Enum):
    EASY = ("Easy", 40.0, 0, 0.15)
    MODERATE = ("Moderate", 25.0, 1, 0.30)
    HARD = ("Hard", 25.0, 2, 0.50)

    def __init__(self, label, min_height, max_occlusion, max_truncation):
        self.label = label
        self.min_height = min_height
        self.max_occlusion = max_occlusion
        self.max_truncation = max_truncation

    def admits(self, ann: ObjectAnnotation) -> bool:
        return (
            ann.height_px >= self.min_height
            and ann.occlusion <= self.max_occlusion
            and ann.truncation <= self.max_truncation
        )


BANDS = (Band.EASY, Band.MODERATE, Band.HARD)


def kitti_difficulty(ann: ObjectAnnotation) -> set[Band]:
    return {b for b in BANDS if b.admits(ann)}


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: dict = None
    recall_positions: tuple = RECALL_POSITIONS

    def threshold(self, cls: str, mode: str) -> float:
        table = self.iou_thresholds or {}
        t = table.get((cls, mode), table.get(cls, KITTI_IOU.get(cls, 0.5)))
        if not 0 < t <= 1:
            raise ValueError(f"IoU threshold must lie in (0, 1], got {t}")
        return t


def _overlap(pred: ObjectAnnotation, gt: ObjectAnnotation, mode: str) -> float:
    if mode == "2D":
        return iou_2d(pred.box2d, gt.box2d)
    a, b = pred.to_box3d(), gt.to_box3d()
    return bev_iou(a, b) if mode == "BEV" else iou_3d(a, b)


def match_frame(preds, gts, cls: str, iou_thr: float, mode: str, band: Band | None = None, frame_id: str = ""):
    """Greedy score-ordered matching within one frame.

    Returns ``(records, num_valid_gt, pairs)`` where records are
    ``(score, is_tp, frame_id, pred_index)`` for counted predictions and pairs
    are ``(pred_index, gt_index)`` for the true positives.
    """
    valid, ignored, dontcare = [], [], []
    neighbors = NEIGHBOR_CLASSES.get(cls, set())
    for j, g in enumerate(gts):
        if g.cls == cls and (band is None or band.admits(g)):
            if mode != "2D" and not g.has_3d:
                raise MissingAnnotationError(f"ground truth {cls} in frame {frame_id!r} has no 3D box")
            valid.append(j)
        elif g.cls == cls or g.cls in neighbors:
            ignored.append(j)
        elif g.cls == DONTCARE:
            dontcare.append(j)

    cand = [i for i, p in enumerate(preds) if p.cls == cls]
    cand.sort(key=lambda i: (-_score(preds[i]), i))
    taken = set()
    records, pairs = [], []
    for i in cand:
        p = preds[i]
        best_j, best_iou = None, iou_thr
        for j in valid:
            if j in taken:
                continue
            o = _overlap(p, gts[j], mode)
            if o >= best_iou and (best_j is None or o > best_iou):
                best_j, best_iou = j, o
        if best_j is not None:
            taken.add(best_j)
            records.append((_score(p), True, frame_id, i))
            pairs.append((i, best_j))
            continue
        if any(_ignored_overlap(p, gts[j], mode) >= iou_thr for j in ignored):
            continue
        if any(iou_2d(p.box2d, gts[j].box2d) >= iou_thr for j in dontcare):
            continue
        records.append((_score(p), False, frame_id, i))
    return records, len(valid), pairs


def _ignored_overlap(p, g, mode):
    if mode != "2D" and not g.has_3d:
        return iou_2d(p.box2d, g.box2d)
    return _overlap(p, g, mode)


def _score(p: ObjectAnnotation) -> float:
    return 1.0 if p.score is None else float(p.score)


def interpolated_ap(records, num_gt: int, recall_positions=RECALL_POSITIONS) -> float:
    """AP in percent from ``(score, is_tp, ...)`` records.

    Precision at each recall position is the maximum precision attained at
    any recall at or above it.
    """
    if num_gt == 0 or not records:
        return 0.0
    ordered = sorted(records, key=lambda r: (-r[0], r[2], r[3]))
    tp = np.cumsum([1.0 if r[1] else 0.0 for r in ordered])
    k = np.arange(1, len(ordered) + 1)
    precision = tp / k
    recall = tp / num_gt
    # running max from the right gives max precision over recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    total = 0.0
    for r in recall_positions:
        idx = np.searchsorted(recall, r - 1e-12, side="left")
        if idx < len(recall):
            total += envelope[idx]
    return 100.0 * total / len(recall_positions)


@dataclass
class APResult:
    ap: float
    num_gt: int
    num_tp: int
    num_fp: int

    @property
    def no_ground_truth(self) -> bool:
        return self.num_gt == 0


def ap40_result(preds: dict, gts: dict, cls: str, band: Band | None, mode: str, cfg: EvalConfig = EvalConfig()) -> APResult:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    thr = cfg.threshold(cls, mode)
    records, num_gt = [], 0
    for fid in sorted(gts):
        r, n, _ = match_frame(preds.get(fid, []), gts[fid], cls, thr, mode, band, fid)
        records.extend(r)
        num_gt += n
    # predictions on frames with no ground-truth entry are all false positives
    for fid in sorted(set(preds) - set(gts)):
        for i, p in enumerate(preds[fid]):
            if p.cls == cls:
                records.append((_score(p), False, fid, i))
    ntp = sum(1 for r in records if r[1])
    return APResult(interpolated_ap(records, num_gt, cfg.recall_positions), num_gt, ntp, len(records) - ntp)


def ap40(preds: dict, gts: dict, cls: str, band: Band | None, mode: str, cfg: EvalConfig = EvalConfig()) -> float:
    return ap40_result(preds, gts, cls, band, mode, cfg).ap


def kitti_eval(preds: dict, gts: dict, classes=("Car", "Pedestrian", "Cyclist"), modes=MODES, cfg: EvalConfig = EvalConfig()) -> dict:
    report = {}
    for cls in classes:
        report[cls] = {}
        for mode in modes:
            report[cls][mode] = {}
            for band in BANDS:
                res = ap40_result(preds, gts, cls, band, mode, cfg)
                report[cls][mode][band.label] = {
                    "ap": res.ap,
                    "num_gt": res.num_gt,
                    "no_ground_truth": res.no_ground_truth,
                }
    return report


def format_kitti_table(report: dict) -> str:
    head = f"{'Mode':<5} {'Class':<12}" + "".join(f"{b.label + ' (%)':>15}" for b in BANDS)
    lines = [head, "-" * len(head)]
    modes = []
    for cls_rep in report.values():
        modes.extend(m for m in cls_rep if m not in modes)
    for mode in modes:
        for cls, cls_rep in report.items():
            if mode not in cls_rep:
                continue
            vals = "".join(f"{cls_rep[mode][b.label]['ap']:>15.2f}" for b in BANDS)
            lines.append(f"{mode:<5} {cls:<12}" + vals)
    return "\n".join(lines) + "\n"


# --- Cityscapes-3D family ---------------------------------------------------


def pairwise_similarities(pred, gt: ObjectAnnotation, d_max: float = BEV_DISTANCE_MAX):
    """``(bev_center, yaw, pitch_roll, size)`` similarities in [0, 1] for a TP pair.

    ``pred`` is a ``Box3D`` or an annotation; predicted pitch and roll are 0.
    """
    pb = pred.to_box3d() if isinstance(pred, ObjectAnnotation) else pred
    gb = gt.to_box3d()
    if min(pb.dims) <= 0 or min(gb.dims) <= 0:
        raise ValueError("box dimensions must be positive")
    d = math.hypot(pb.x - gb.x, pb.z - gb.z)
    bevcd = max(0.0, 1.0 - d / d_max)
    yawsim = (1.0 + math.cos(pb.yaw - gb.yaw)) / 2.0
    prsim = ((1.0 + math.cos(gt.pitch)) / 2.0) * ((1.0 + math.cos(gt.roll)) / 2.0)
    sizesim = 1.0
    for a, b in zip(pb.dims, gb.dims):
        sizesim *= min(a / b, b / a)
    return bevcd, yawsim, prsim, sizesim


def ds_score(ap: float, bevcd: float, yawsim: float, prsim: float, sizesim: float) -> float:
    """Detection score (percent): AP scaled by the mean of the four similarities."""
    for name, v in zip(("ap", "bevcd", "yawsim", "prsim", "sizesim"), (ap, bevcd, yawsim, prsim, sizesim)):
        if not 0 <= v <= 100:
            raise ValueError(f"{name}={v} outside [0, 100]")
    return ap * (bevcd + yawsim + prsim + sizesim) / 400.0


@dataclass
class CityscapesRow:
    cls: str
    ap: float
    bevcd: float
    yawsim: float
    prsim: float
    sizesim: float
    ds: float
    num_tp: int

    @property
    def no_true_positives(self) -> bool:
        return self.num_tp == 0

    def to_dict(self) -> dict:
        return {
            "class": self.cls,
            "DS": self.ds,
            "AP": self.ap,
            "BEVCD": self.bevcd,
            "YawSim": self.yawsim,
            "PRSim": self.prsim,
            "SizeSim": self.sizesim,
            "num_tp": self.num_tp,
            "no_true_positives": self.no_true_positives,
        }


def cityscapes_eval(preds: dict, gts: dict, cls: str, iou_thr: float = 0.5) -> CityscapesRow:
    records, num_gt, sims = [], 0, []
    for fid in sorted(set(gts) | set(preds)):
        p_list, g_list = preds.get(fid, []), gts.get(fid, [])
        r, n, pairs = match_frame(p_list, g_list, cls, iou_thr, "2D", None, fid)
        records.extend(r)
        num_gt += n
        for i, j in pairs:
            sims.append(pairwise_similarities(p_list[i], g_list[j]))
    ap = interpolated_ap(records, num_gt)
    if sims:
        means = [100.0 * float(np.mean(col)) for col in zip(*sims)]
    else:
        means = [0.0, 0.0, 0.0, 0.0]
    return CityscapesRow(cls, ap, *means, ds=ds_score(ap, *means), num_tp=len(sims))


def format_cityscapes_table(rows) -> str:
    cols = ("DS", "AP", "BEVCD", "YawSim", "PRSim", "SizeSim")
    head = f"{'Class':<12}" + "".join(f"{c + ' (%)':>13}" for c in cols)
    lines = [head, "-" * len(head)]
    for row in rows:
        d = row.to_dict()
        lines.append(f"{row.cls:<12}" + "".join(f"{d[c]:>13.2f}" for c in cols))
    return "\n".join(lines) + "\n"


def ds_from_components_csv(text: str) -> list[dict]:
    """Compose DS for each row of a ``class,ap,bevcd,yawsim,prsim,sizesim`` CSV."""
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        vals = {k.strip().lower(): v for k, v in row.items()}
        comps = [float(vals[k]) for k in ("ap", "bevcd", "yawsim", "prsim", "sizesim")]
        ds = ds_score(*comps)
        out.append({"class": vals.get("class", ""), "DS": ds, "DS_rounded": round(ds, 2)})
    return out
