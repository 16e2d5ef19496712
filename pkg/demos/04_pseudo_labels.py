"""Turn 3D predictions into training labels for a dataset with only 2D boxes.

A simulated detector adds jitter, false positives and mislocalized boxes.
Matching each class's detections to the labeled 2D boxes keeps pairs whose
cost 1 - IoU stays within eps and drops everything else.
"""

from mono3d.codec import CodecConfig
from mono3d.pseudo import PseudoConfig, generate_pseudo_labels, rebuild_targets
from mono3d.synthetic import NOISE_PROFILES, SceneConfig, simulate_frame

scene = SceneConfig(seed=11)
codec = CodecConfig()
# walk the frame stream until the detector has mislocalized something
frame = next(
    f
    for f in (simulate_frame(scene, NOISE_PROFILES["corrupt"], codec, i) for i in range(100))
    if any(o.kind == "mislocalized" for o in f.sim)
)
print("frame", frame.index)
print(f"{len(frame.gt_boxes)} labeled 2D boxes, {len(frame.sim)} simulated detector outputs")
print("kinds:", sorted(o.kind for o in frame.sim))

labels, report = generate_pseudo_labels(frame.maps, frame.gt_boxes, frame.K, PseudoConfig(), codec)
print(f"kept {len(report.matched)}, removed {len(report.removed)}, unmatched predictions {len(report.unmatched_pred)}")
for lab in labels:
    print(f"  gt #{lab.gt_idx}: {scene.class_names[lab.class_id]:<10} cost = {lab.cost:.3f}  depth = {lab.depth:.2f} m")

maps, skipped = rebuild_targets(labels, scene.image_size, scene.class_names, codec)
print("rebuilt heads:", sorted(maps.supervised), "skipped:", skipped)
