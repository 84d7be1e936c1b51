import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermvis import landmarks
from thermvis.errors import (
    BoxOutsideImage,
    EmptyInput,
    InsufficientSamples,
    LengthMismatch,
    ParseError,
    SchemaMismatch,
    ZeroInterOcular,
)
from thermvis.geometry import DEFAULT_TEMPLATE, Image, KeypointSet, Schema
from thermvis.landmarks import Box, OffsetMode, OffsetModel, RansacConfig

BASE = DEFAULT_TEMPLATE.points.points


# -- crops -----------------------------------------------------------------------

def test_zero_jitter_gives_copies():
    b = Box(10, 10, 50, 50)
    assert landmarks.five_random_crops(b, (128, 128), 3, jitter=0.0) == [b] * 5


def test_crops_deterministic_and_contain_centre():
    b = Box(10, 10, 50, 50)
    a = landmarks.five_random_crops(b, (128, 128), 7)
    assert a == landmarks.five_random_crops(b, (128, 128), 7)
    assert len(a) == 5
    for c in a:
        assert c.contains(35, 35)
        assert c.x >= 0 and c.y >= 0 and c.x + c.w <= 128 and c.y + c.h <= 128


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 60), st.floats(0, 60), st.floats(4, 60), st.floats(4, 60))
def test_crops_property(seed, x, y, w, h):
    b = Box(x, y, w, h)
    for c in landmarks.five_random_crops(b, (128, 128), seed):
        assert c.contains(*b.center)
        assert c.x >= 0 and c.y >= 0 and c.x + c.w <= 128 + 1e-9 and c.y + c.h <= 128 + 1e-9
        assert c.w <= 1.1 * w + 1e-9 and c.h <= 1.1 * h + 1e-9


def test_box_outside_image():
    with pytest.raises(BoxOutsideImage):
        landmarks.five_random_crops(Box(100, 100, 50, 50), (128, 128), 0)


# -- aggregation ----------------------------------------------------------------

def test_identical_predictions():
    kp = KeypointSet(BASE)
    assert landmarks.aggregate_keypoints([kp] * 5) == kp


def test_gross_outlier_excluded():
    kp = KeypointSet(BASE)
    out = landmarks.aggregate_keypoints([kp] * 4 + [KeypointSet(BASE + [100, 0])], RansacConfig(5.0))
    assert out.allclose(kp, atol=1e-12)


def test_noisy_predictions_close_to_median():
    rng = np.random.default_rng(11)
    preds = [BASE + rng.normal(0, 1, BASE.shape) for _ in range(5)]
    out = landmarks.aggregate_keypoints([KeypointSet(p) for p in preds]).points
    med = np.median(preds, axis=0)
    assert np.max(np.linalg.norm(out - med, axis=1)) <= 1.5


def test_no_consensus_falls_back_to_median():
    preds = [BASE + [30 * i, 0] for i in range(5)]
    out = landmarks.aggregate_keypoints([KeypointSet(p) for p in preds])
    np.testing.assert_allclose(out.points, np.median(preds, axis=0))


def test_similarity_residual_mode_runs_and_is_order_invariant():
    rng = np.random.default_rng(2)
    preds = [KeypointSet(BASE + rng.normal(0, 0.3, BASE.shape)) for _ in range(4)]
    preds.append(KeypointSet(BASE[::-1] + 5))
    cfg = RansacConfig(2.0, "similarity")
    a = landmarks.aggregate_keypoints(preds, cfg)
    b = landmarks.aggregate_keypoints(preds[::-1], cfg)
    assert a.allclose(b, atol=1e-12)


def test_aggregate_errors():
    with pytest.raises(EmptyInput):
        landmarks.aggregate_keypoints([])
    raw = KeypointSet(np.zeros((7, 2)), Schema.SEVEN_POINT_RAW)
    with pytest.raises(SchemaMismatch):
        landmarks.aggregate_keypoints([raw, KeypointSet(BASE)])


class _ShiftPredictor:
    """Returns truth shifted by the crop offset: a crop-sensitive fake model."""

    def __init__(self, truth):
        self.truth = truth

    def __call__(self, img, crop):
        return KeypointSet(self.truth + 0.01 * np.array([crop.x - 10, crop.y - 10]), Schema.SEVEN_POINT_RAW)


def test_predict_multi_crop():
    truth = np.vstack([BASE[:1] - [5, 0], BASE[:1] + [5, 0], BASE[1:2] - [5, 0], BASE[1:2] + [5, 0], BASE[2:]])
    img = Image(np.zeros((128, 128)))
    out = landmarks.predict_multi_crop(_ShiftPredictor(truth), img, Box(10, 10, 100, 100), rng_seed=4)
    assert out.schema is Schema.SEVEN_POINT_RAW
    assert np.max(np.abs(out.points - truth)) < 0.2
    np.testing.assert_allclose(landmarks.to_five_point(out).points, BASE, atol=0.2)


# -- five-point reduction -----------------------------------------------------------

def test_to_five_point_midpoints():
    raw = np.array([[10, 10], [20, 10], [40, 10], [50, 12], [30, 20], [22, 30], [38, 30]], float)
    five = landmarks.to_five_point(KeypointSet(raw, Schema.SEVEN_POINT_RAW)).points
    np.testing.assert_array_equal(five[0], [15, 10])
    np.testing.assert_array_equal(five[1], [45, 11])
    np.testing.assert_array_equal(five[2:], raw[4:])


def test_to_five_point_symmetry_and_random():
    raw = np.array([[40, 50], [54, 50], [74, 50], [88, 50], [64, 70], [50, 90], [78, 90]], float)
    five = landmarks.to_five_point(KeypointSet(raw, Schema.SEVEN_POINT_RAW)).points
    assert five[0, 0] + five[1, 0] == 128.0
    rng = np.random.default_rng(0)
    r = rng.uniform(0, 128, (7, 2))
    f = landmarks.to_five_point(KeypointSet(r, Schema.SEVEN_POINT_RAW)).points
    np.testing.assert_array_equal(f[0], (r[0] + r[1]) / 2)
    np.testing.assert_array_equal(f[1], (r[2] + r[3]) / 2)
    with pytest.raises(SchemaMismatch):
        landmarks.to_five_point(KeypointSet(BASE))


# -- offset calibration ----------------------------------------------------------

def _sets(arrs):
    return [KeypointSet(a) for a in arrs]


def test_calibrate_identity_and_shift():
    rng = np.random.default_rng(0)
    gts = [BASE + rng.normal(0, 3, BASE.shape) for _ in range(10)]
    for mode in OffsetMode:
        m = landmarks.calibrate_offset(_sets(gts), _sets(gts), mode)
        assert landmarks.calibration_residual(_sets(gts), _sets(gts), m) < 1e-9
    preds = [g + [2, -3] for g in gts]
    m = landmarks.calibrate_offset(_sets(preds), _sets(gts), OffsetMode.OFFSET_ONLY)
    np.testing.assert_allclose(m.offsets, np.tile([-2, 3], (5, 1)), atol=1e-12)
    assert landmarks.calibration_residual(_sets(preds), _sets(gts), m) < 1e-12


def test_affine_matches_normal_equations():
    rng = np.random.default_rng(4)
    a = np.array([[1.05, 0.02], [-0.03, 0.97]])
    b = np.array([1.5, -2.0])
    gts = [BASE + rng.normal(0, 5, BASE.shape) for _ in range(40)]
    preds = [g @ a.T + b + rng.normal(0, 0.1, BASE.shape) for g in gts]
    m = landmarks.calibrate_offset(_sets(preds), _sets(gts), OffsetMode.AFFINE)
    for j in range(5):
        x = np.array([np.r_[p[j], 1.0] for p in preds])
        y = np.array([g[j] for g in gts])
        coef = np.linalg.solve(x.T @ x, x.T @ y)
        np.testing.assert_allclose(m.matrices[j], coef[:2].T, atol=1e-8)
        np.testing.assert_allclose(m.offsets[j], coef[2], atol=1e-8)
    # the fitted map approximately inverts the distortion
    np.testing.assert_allclose(m.matrices[0], np.linalg.inv(a), atol=0.05)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(OffsetMode)))
def test_calibration_never_increases_residual(seed, mode):
    rng = np.random.default_rng(seed)
    gts = [BASE + rng.normal(0, 5, BASE.shape) for _ in range(12)]
    preds = [g + rng.normal(0, 2, 2) + rng.normal(0, 1, BASE.shape) for g in gts]
    m = landmarks.calibrate_offset(_sets(preds), _sets(gts), mode)

    def sq(model):
        return sum(np.sum((landmarks.apply_offset(model, KeypointSet(p)).points - g) ** 2)
                   for p, g in zip(preds, gts))

    assert sq(m) <= sq(OffsetModel.identity()) + 1e-9


def test_calibrate_errors():
    with pytest.raises(LengthMismatch):
        landmarks.calibrate_offset(_sets([BASE]), [])
    with pytest.raises(InsufficientSamples):
        landmarks.calibrate_offset(_sets([BASE] * 2), _sets([BASE] * 2), OffsetMode.AFFINE)
    with pytest.raises(InsufficientSamples):
        landmarks.calibrate_offset([], [])


def test_apply_offset_examples():
    kp = KeypointSet(BASE)
    assert landmarks.apply_offset(OffsetModel.identity(), kp) == kp
    m = OffsetModel(np.tile(np.eye(2), (5, 1, 1)), np.ones((5, 2)))
    np.testing.assert_array_equal(landmarks.apply_offset(m, kp).points, BASE + 1)


def test_offset_model_file_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    m = OffsetModel(rng.normal(size=(5, 2, 2)), rng.normal(size=(5, 2)), OffsetMode.AFFINE)
    landmarks.write_offset_model(m, tmp_path / "m.txt")
    back = landmarks.read_offset_model(tmp_path / "m.txt")
    np.testing.assert_array_equal(back.matrices, m.matrices)
    np.testing.assert_array_equal(back.offsets, m.offsets)
    assert back.mode is OffsetMode.AFFINE


# -- NME and report ---------------------------------------------------------------

def test_nme_cases():
    gt = KeypointSet(BASE)
    assert landmarks.nme(gt, gt) == 0.0
    iod = 40.0
    assert landmarks.nme(KeypointSet(BASE + [0.05 * iod, 0]), gt) == pytest.approx(0.05, abs=1e-15)
    rng = np.random.default_rng(9)
    p = BASE + rng.normal(0, 2, BASE.shape)
    direct = np.mean(np.sqrt(np.sum((p - BASE) ** 2, axis=1))) / np.sqrt(np.sum((BASE[1] - BASE[0]) ** 2))
    assert abs(landmarks.nme(KeypointSet(p), gt) - direct) <= 1e-12
    flat = BASE.copy()
    flat[1] = flat[0]
    with pytest.raises(ZeroInterOcular):
        landmarks.nme(gt, KeypointSet(flat))


def test_report_cases():
    r = landmarks.keypoint_report([0.0] * 4)
    assert (r.mean, r.auc, r.failure_rate) == (0.0, 1.0, 0.0)
    r = landmarks.keypoint_report([0.2] * 4)
    assert (r.auc, r.failure_rate) == (0.0, 1.0)
    r = landmarks.keypoint_report([0.02, 0.02, 0.10, 0.10])
    assert r.auc == pytest.approx(0.375, abs=1e-15) and r.failure_rate == 0.5
    assert r.median == pytest.approx(0.06) and r.mad == pytest.approx(0.04)
    assert r.max_error == 0.1 and r.n == 4
    with pytest.raises(EmptyInput):
        landmarks.keypoint_report([])


def test_report_csv_columns():
    r = landmarks.keypoint_report([0.01, 0.03])
    text = landmarks.report_csv([("seqA", "ours", r)])
    header, row = text.strip().split("\n")
    assert header == "sequence,method,mean,std,median,mad,max_error,auc_0.08,failure_rate_0.08,n"
    assert row.startswith("seqA,ours,0.020000,0.010000,")


# -- keypoint files ------------------------------------------------------------------

def test_keypoint_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    recs = [(i, KeypointSet(rng.uniform(0, 128, (7, 2)), Schema.SEVEN_POINT_RAW)) for i in (3, 3, 5)]
    landmarks.write_keypoints(tmp_path / "k.kp", recs)
    schema, back = landmarks.read_keypoints(tmp_path / "k.kp")
    assert schema is Schema.SEVEN_POINT_RAW
    assert [f for f, _ in back] == [3, 3, 5]
    assert all(a == b for (_, a), (_, b) in zip(recs, back))


def test_keypoint_file_errors_cite_line(tmp_path):
    p = tmp_path / "bad.kp"
    p.write_text("schema FIVE_POINT\n0 " + " ".join(["1"] * 10) + "\n1 2 3\n")
    with pytest.raises(ParseError, match=r"bad.kp:3"):
        landmarks.read_keypoints(p)
    p.write_text("0 1 2\n")
    with pytest.raises(ParseError, match=r"bad.kp:1"):
        landmarks.read_keypoints(p)
