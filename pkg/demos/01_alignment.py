"""Face alignment: fit a similarity transform and warp onto the template."""
import numpy as np

from thermvis import dataset, geometry
from thermvis.geometry import DEFAULT_TEMPLATE

# a synthetic head turned 25 degrees, rendered at 128x128
kp = dataset.face_keypoints(yaw_deg=25.0, pitch_deg=-10.0, center=(70, 66), scale=18.0)
ys, xs = np.mgrid[0:128, 0:128]
img = geometry.Image((xs + ys) / 254.0)

aligned, fwd = geometry.align_face(img, kp, DEFAULT_TEMPLATE)
print("scale  ", round(fwd.scale, 4))
print("angle  ", round(np.degrees(fwd.angle), 3), "deg")
print("shift  ", np.round(fwd.translation, 3))

# keypoints land on the template up to the non-rigid part of the pose
moved = geometry.apply_transform(fwd, kp)
print("per-landmark residual (px):", np.round(np.linalg.norm(moved.points - DEFAULT_TEMPLATE.points.points, axis=1), 3))

# the inverse takes template coordinates back into the source image
back = geometry.apply_transform(geometry.invert_transform(fwd), moved)
print("round trip max error:", float(np.max(np.abs(back.points - kp.points))))
print("aligned image:", aligned.shape)

# a template can be re-estimated from forward-facing samples
rng = np.random.default_rng(0)
samples = [dataset.face_keypoints(rng.normal(0, 3), rng.normal(0, 3)) for _ in range(50)]
print("mean template:\n", np.round(geometry.mean_template(samples, (128, 128)).points.points, 2))
