"""Joint training across datasets that label different classes.

A frame from a dataset that never annotates cyclists carries no evidence
about cyclists. Masking that channel keeps a confident cyclist prediction
from being punished as a false positive.
"""

import numpy as np

from mono3d.codec import CodecConfig, encode_frame
from mono3d.synthetic import SceneConfig, generate_scene
from mono3d.training import ClassRegistry, DatasetManifest, class_mask, joint_loss

kitti = DatasetManifest("kitti", {"Car", "Pedestrian", "Cyclist"})
cars_only = DatasetManifest("cars", {"Car"})
registry = ClassRegistry.from_manifests([kitti, cars_only])
print("registry:", registry.names)

scene = SceneConfig(seed=3, class_names=registry.names, class_weights=(0.6, 0.2, 0.2))
K, objects = generate_scene(scene, 0)
target = encode_frame([(c, b) for c, b in objects if registry.names[c] == "Car"], K, CodecConfig(), registry.names).maps

pred = target.copy()
pred.heatmap = np.clip(pred.heatmap, 0.01, 0.99)
pred.heatmap[registry.index("Cyclist"), 10, 10] = 0.95  # a cyclist the label set knows nothing about

weights = {"heatmap": 1.0, "offset": 1.0, "size2d": 0.1, "depth": 1.0, "orient": 1.0, "dims": 1.0}
for manifest in (kitti, cars_only):
    mask = class_mask(manifest, registry)
    total, parts = joint_loss(pred, target, mask, weights)
    print(f"{manifest.name:<6} mask = {mask.astype(int)}  heatmap loss = {parts['heatmap']:.4f}")
