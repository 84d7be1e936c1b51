"""Multi-crop keypoint fusion, eye-centre reduction, offset calibration and NME."""
import numpy as np

from thermvis import dataset, landmarks
from thermvis.geometry import Image, KeypointSet, Schema
from thermvis.landmarks import Box, OffsetMode

rng = np.random.default_rng(3)
truth7 = dataset.face_keypoints(10.0, 5.0, schema=Schema.SEVEN_POINT_RAW)


class NoisyPredictor:
    """Stand-in regressor: truth plus noise, and a gross miss on one crop in five."""

    def __init__(self):
        self.calls = 0

    def __call__(self, img, crop):
        self.calls += 1
        pts = truth7.points + rng.normal(0, 0.7, truth7.points.shape)
        if self.calls % 5 == 0:
            pts = pts + [25.0, -30.0]
        return KeypointSet(pts, Schema.SEVEN_POINT_RAW)


img = Image(np.zeros((128, 128)))
crops = landmarks.five_random_crops(Box(24, 30, 80, 80), (128, 128), rng_seed=7)
print("crops:", [tuple(round(float(v), 1) for v in (c.x, c.y, c.w, c.h)) for c in crops])

fused = landmarks.predict_multi_crop(NoisyPredictor(), img, Box(24, 30, 80, 80), rng_seed=7)
five = landmarks.to_five_point(fused)
gt5 = landmarks.to_five_point(truth7)
print("NME of fused prediction:", round(landmarks.nme(five, gt5), 4))

# a detector with a systematic bias, calibrated on a validation split
gts = [dataset.face_keypoints(*rng.normal(0, 15, 2)) for _ in range(60)]
preds = [KeypointSet(g.points + [1.5, -2.0] + rng.normal(0, 0.5, (5, 2))) for g in gts]
for mode in OffsetMode:
    model = landmarks.calibrate_offset(preds[:40], gts[:40], mode)
    before = [landmarks.nme(p, g) for p, g in zip(preds[40:], gts[40:])]
    after = [landmarks.nme(landmarks.apply_offset(model, p), g) for p, g in zip(preds[40:], gts[40:])]
    print(mode.name, "held-out mean NME", round(np.mean(before), 4), "->", round(np.mean(after), 4))

report = landmarks.keypoint_report(after)
print(landmarks.report_csv([("validation", "calibrated", report)]))
