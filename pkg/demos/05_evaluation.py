"""Score detections two ways: KITTI AP over 40 recall points, and DS.

DS multiplies AP by the mean of four true-positive similarities, so a
detector that finds every object but places them poorly still loses points.
"""

from mono3d.codec import CodecConfig
from mono3d.metrics import cityscapes_eval, ds_score, format_cityscapes_table, format_kitti_table, kitti_eval
from mono3d.pipeline import scene_annotations
from mono3d.synthetic import NOISE_PROFILES, SceneConfig, simulate_frame

scene = SceneConfig(seed=5)
gts, preds = {}, {}
for i in range(20):
    frame = simulate_frame(scene, NOISE_PROFILES["default"], CodecConfig(), i)
    fid = f"{i:06d}"
    gts[fid] = scene_annotations(frame.K, frame.objects, scene.class_names)
    preds[fid] = scene_annotations(
        frame.K, [(o.class_id, o.box) for o in frame.sim], scene.class_names, [o.score for o in frame.sim]
    )

print(format_kitti_table(kitti_eval(preds, gts)))
print(format_cityscapes_table([cityscapes_eval(preds, gts, c) for c in scene.class_names]))

# DS straight from component values
print("DS(36.44, 95.73, 90.12, 99.98, 75.52) =", round(ds_score(36.44, 95.73, 90.12, 99.98, 75.52), 2))
