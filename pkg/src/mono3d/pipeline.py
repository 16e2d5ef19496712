"""End-to-end synthetic closure run: simulate, pseudo-label, rebuild, score."""

from __future__ import annotations

import math
from dataclasses import asdict
from pathlib import Path

from .codec import CodecConfig, encode_frame, find_peaks
from .geometry import observation_angle, project_box3d, project_point
from .kitti import ObjectAnnotation, format_kitti_calib, format_kitti_label_line
from .pseudo import PseudoConfig, generate_pseudo_labels, labels_to_jsonl, rebuild_targets
from .synthetic import NoiseConfig, SceneConfig, generate_scene, simulate_frame


def closure_frame(
    scene_cfg: SceneConfig,
    noise: NoiseConfig,
    codec_cfg: CodecConfig,
    pseudo_cfg: PseudoConfig,
    index: int,
) -> dict:
    """Run one synthetic frame through pseudo labeling and compare with the truth.

    A ground-truth object counts as recovered when it received a pseudo label
    whose heatmap center lies within half a cell of its true projected center.
    """
    frame = simulate_frame(scene_cfg, noise, codec_cfg, index)
    labels, report = generate_pseudo_labels(frame.maps, frame.gt_boxes, frame.K, pseudo_cfg, codec_cfg)

    tol = 0.5 * codec_cfg.stride
    recovered = 0
    center_err = 0.0
    for lab in labels:
        u, v = project_point(frame.K, frame.objects[lab.gt_idx][1].center)
        err = math.hypot(lab.projected_center[0] - u, lab.projected_center[1] - v)
        center_err += err
        if err < tol:
            recovered += 1

    by_cell = frame.cell_kinds(codec_cfg.stride)
    labeled_preds = {lab.pred_idx for lab in labels}
    recorded = {p for part in report.pred_partition()[1:] for p in part}
    injected = excluded = 0
    for i, det in enumerate(report.detections):
        sim = by_cell.get(det.cell)
        if sim is None or sim.kind == "true":
            continue
        injected += 1
        if i not in labeled_preds and i in recorded:
            excluded += 1

    pseudo_maps, _ = rebuild_targets(labels, (frame.K.width, frame.K.height), scene_cfg.class_names, codec_cfg)
    gt_maps = encode_frame(frame.objects, frame.K, codec_cfg, scene_cfg.class_names).maps
    gt_peaks = {tuple(int(x) for x in p) for p in find_peaks(gt_maps.heatmap, 0.0)}
    pseudo_peaks = {tuple(int(x) for x in p) for p in find_peaks(pseudo_maps.heatmap, 0.0)}

    return {
        "frame": f"{index:06d}",
        "num_gt": len(frame.objects),
        "num_detections": len(report.detections),
        "matched": len(report.matched),
        "removed": len(report.removed),
        "off_image": len(report.off_image),
        "unmatched_gt": len(report.unmatched_gt),
        "unmatched_pred": len(report.unmatched_pred),
        "recovered": recovered,
        "corruptions_injected": sum(1 for o in frame.sim if o.kind != "true"),
        "corruptions_detected": injected,
        "corruptions_excluded": excluded,
        "pseudo_peaks_on_gt": len(pseudo_peaks & gt_peaks),
        "pseudo_peaks": len(pseudo_peaks),
        "total_cost": float(sum(c for _, _, c in report.matched)),
        "center_error_px": center_err,
        "labels_jsonl": labels_to_jsonl(f"{index:06d}", labels, scene_cfg.class_names),
    }


SUM_KEYS = (
    "num_gt",
    "num_detections",
    "matched",
    "removed",
    "off_image",
    "unmatched_gt",
    "unmatched_pred",
    "recovered",
    "corruptions_injected",
    "corruptions_detected",
    "corruptions_excluded",
    "pseudo_peaks_on_gt",
    "pseudo_peaks",
)


def _rate(num: int, den: int, empty: float = 100.0) -> float:
    return 100.0 * num / den if den else empty


def summarize(frames: list[dict]) -> dict:
    totals = {k: int(sum(f[k] for f in frames)) for k in SUM_KEYS}
    totals["total_cost"] = float(sum(f["total_cost"] for f in frames))
    err = float(sum(f["center_error_px"] for f in frames))
    totals["mean_center_error_px"] = err / totals["matched"] if totals["matched"] else 0.0
    totals.update(
        frames=len(frames),
        recovery_rate=_rate(totals["recovered"], totals["num_gt"]),
        match_rate=_rate(totals["matched"], totals["num_gt"]),
        removal_rate=_rate(totals["removed"], totals["num_gt"], empty=0.0),
        corruption_exclusion_rate=_rate(totals["corruptions_excluded"], totals["corruptions_detected"]),
    )
    return totals


def config_echo(scene_cfg, noise, codec_cfg, pseudo_cfg) -> dict:
    scene = asdict(scene_cfg)
    scene["dims"] = {k: [list(r) for r in v] for k, v in scene["dims"].items()}
    return {
        "scene": scene,
        "noise": asdict(noise),
        "codec": asdict(codec_cfg),
        "pseudo": asdict(pseudo_cfg),
    }



def scene_annotations(K, objects, class_names, scores=None) -> list[ObjectAnnotation]:
    """KITTI annotations for ``(class_id, Box3D)`` pairs; ``scores`` marks them as predictions."""
    anns = []
    for i, (cid, box) in enumerate(objects):
        alpha = observation_angle(box.yaw, box.x, box.z)
        extra = {} if scores is None else {"score": float(scores[i])}
        anns.append(ObjectAnnotation.from_box3d(class_names[cid], box, project_box3d(K, box), alpha, **extra))
    return anns


def export_kitti(root, scene_cfg: SceneConfig, count: int) -> list[str]:
    """Write ``count`` synthetic frames as ``label_2/`` and ``calib/`` text files under ``root``."""
    root = Path(root)
    (root / "label_2").mkdir(parents=True, exist_ok=True)
    (root / "calib").mkdir(parents=True, exist_ok=True)
    ids = []
    for index in range(count):
        fid = f"{index:06d}"
        K, objects = generate_scene(scene_cfg, index)
        lines = [format_kitti_label_line(a) for a in scene_annotations(K, objects, scene_cfg.class_names)]
        (root / "label_2" / f"{fid}.txt").write_text("".join(line + "\n" for line in lines))
        (root / "calib" / f"{fid}.txt").write_text(format_kitti_calib(K))
        ids.append(fid)
    return ids
