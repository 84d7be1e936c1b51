import numpy as np
import pytest

from thermvis import dataset, geometry, sync, verification as ver
from thermvis.dataset import (
    DatasetManifest,
    Frame,
    Location,
    Pose,
    Sequence,
    Split,
    Spectrum,
    Subject,
    SyntheticConfig,
)
from thermvis.errors import InvalidConfig, InvariantViolation, MagicMismatch, ParseError, TruncatedFile
from thermvis.geometry import DEFAULT_TEMPLATE, Image, KeypointSet, Schema


def _manifest():
    kp = KeypointSet(DEFAULT_TEMPLATE.points.points + 0.125)
    seq = Sequence(Spectrum.THERMAL, Pose.FRONTAL, Location.OUTDOOR, 100.0,
                   (Frame(0, "a.pgm", kp, 0), Frame(1, "b.pgm", None, None)))
    return DatasetManifest((Subject("s1", Split.EVAL, (seq,)), Subject("s2", Split.TRAIN, ())))


# -- manifest ----------------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    m = _manifest()
    dataset.write_manifest(m, tmp_path / "m.jsonl")
    assert dataset.load_manifest(tmp_path / "m.jsonl") == m
    empty = DatasetManifest(())
    dataset.write_manifest(empty, tmp_path / "e.jsonl")
    assert len(dataset.load_manifest(tmp_path / "e.jsonl")) == 0


def test_manifest_invariants():
    with pytest.raises(InvariantViolation):
        DatasetManifest((Subject("s1", Split.EVAL), Subject("s1", Split.TRAIN)))
    seq = Sequence(Spectrum.VISIBLE, Pose.FRONTAL, Location.INDOOR, 1.5,
                   (Frame(0, "a.pgm"), Frame(0, "b.pgm")))
    with pytest.raises(InvariantViolation):
        DatasetManifest((Subject("s1", Split.EVAL, (seq,)),))


def test_manifest_parse_errors_cite_line(tmp_path):
    lines = dataset.dumps_manifest(_manifest()).splitlines()
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines[:2] + ["{not json"] + lines[2:]) + "\n")
    with pytest.raises(ParseError, match=r"bad.jsonl:3"):
        dataset.load_manifest(bad)
    dup = tmp_path / "dup.jsonl"
    text = dataset.dumps_manifest(DatasetManifest((Subject("s1", Split.EVAL),)))
    extra = [ln for ln in text.splitlines() if '"subject"' in ln]
    dup.write_text(text + extra[0] + "\n")
    with pytest.raises((ParseError, InvariantViolation)):
        dataset.load_manifest(dup)


# -- embeddings ---------------------------------------------------------------------

def test_embedding_store(tmp_path):
    p = tmp_path / "e.emb"
    dataset.write_embeddings(np.zeros((0, 8)), p)
    assert p.stat().st_size == 16 and dataset.read_embeddings(p).shape == (0, 8)
    dataset.write_embeddings([[1.0, 0.0, 0.0, 0.0]], p)
    assert p.stat().st_size == 16 + 4 * 4
    e = np.random.default_rng(0).normal(size=(1000, 32)).astype(np.float32)
    dataset.write_embeddings(e, p)
    assert dataset.read_embeddings(p).tobytes() == e.tobytes()


def test_embedding_store_errors(tmp_path):
    p = tmp_path / "e.emb"
    p.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(MagicMismatch):
        dataset.read_embeddings(p)
    dataset.write_embeddings(np.ones((3, 4)), p)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(TruncatedFile):
        dataset.read_embeddings(p)


# -- images --------------------------------------------------------------------

@pytest.mark.parametrize("shape", [(9, 13), (9, 13, 3)])
@pytest.mark.parametrize("maxval", [255, 65535])
def test_image_round_trip(tmp_path, shape, maxval):
    q = np.random.default_rng(1).integers(0, maxval + 1, shape) / maxval
    dataset.write_image(Image(q), tmp_path / "x.pnm", maxval)
    back = dataset.read_image(tmp_path / "x.pnm")
    assert back.shape == shape
    np.testing.assert_array_equal(back.data, q)


# -- test doubles -------------------------------------------------------------------

def test_doubles_are_pure():
    img = Image(np.random.default_rng(0).uniform(0, 1, (32, 32)))
    a = dataset.ProjectionExtractor(8, (32, 32), seed=4)
    b = dataset.ProjectionExtractor(8, (32, 32), seed=4)
    assert a.extract(img).tobytes() == b.extract(img).tobytes()
    assert np.linalg.norm(a.extract(img)) == pytest.approx(1.0)
    assert dataset.IdentitySynthesis()(img) is img
    np.testing.assert_allclose(dataset.LinearSynthesis()(img).data, 1.0 - img.data)


# -- generator --------------------------------------------------------------------

def test_face_model_frontal_is_template():
    kp = dataset.face_keypoints(0.0, 0.0)
    np.testing.assert_allclose(kp.points, DEFAULT_TEMPLATE.points.points, atol=1e-12)
    raw = dataset.face_keypoints(0.0, 0.0, schema=Schema.SEVEN_POINT_RAW)
    from thermvis.landmarks import to_five_point
    np.testing.assert_allclose(to_five_point(raw).points, kp.points, atol=1e-12)


def test_single_frame_dataset_is_canonical():
    d = dataset.generate_synthetic(SyntheticConfig(n_subjects=1, frames_per_sequence=1, noise_sigma_px=0.0))
    frames = [(q.spectrum, f) for s in d.manifest.subjects for q in s.sequences for f in q.frames]
    assert sorted(sp.value for sp, _ in frames) == ["THERMAL", "THERMAL", "VISIBLE", "VISIBLE"]
    for _, f in frames:
        t = geometry.solve_similarity(f.keypoints, DEFAULT_TEMPLATE.points)
        assert geometry.fit_residual(t, f.keypoints, DEFAULT_TEMPLATE.points) < 1e-18
        assert abs(t.angle) < 1e-12


def test_generator_deterministic(tmp_path):
    cfg = SyntheticConfig(n_subjects=3, frames_per_sequence=5, noise_sigma_px=0.0, seed=9)
    a, b = dataset.generate_synthetic(cfg), dataset.generate_synthetic(cfg)
    assert a.manifest == b.manifest and a.embeddings.tobytes() == b.embeddings.tobytes()
    a.write(tmp_path / "a")
    b.write(tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    assert dataset.load_manifest(tmp_path / "a" / "manifest.jsonl") == a.manifest


def test_invalid_config():
    with pytest.raises(InvalidConfig):
        SyntheticConfig(n_subjects=0)
    with pytest.raises(InvalidConfig):
        SyntheticConfig(articulation_amplitude_deg=95)


def test_rendered_faces_align_to_template():
    d = dataset.generate_synthetic(SyntheticConfig(n_subjects=1, frames_per_sequence=4, seed=1))
    s = d.manifest.subjects[0]
    for q in s.sequences:
        for f in q.frames:
            img = d.image(f.image_path)
            assert img.shape == (128, 128)
            aligned, _ = geometry.align_face(img, f.keypoints)
            assert aligned.shape == (128, 128)


def test_default_config_ground_truth():
    d = dataset.generate_synthetic(SyntheticConfig(seed=1))
    g = [(it.subject_id, d.embeddings[it.embedding_ref])
         for it in ver._select(d.manifest, ver.CohortFilter(Spectrum.VISIBLE), Split.EVAL)]
    q = [(it.subject_id, d.embeddings[it.embedding_ref])
         for it in ver._select(d.manifest, ver.CohortFilter(Spectrum.THERMAL), Split.EVAL)]
    assert ver.verification_report(ver.score_cohort(g, q)).auc > 99.0

    tracks = dataset.video_tracks(d.manifest)
    hit = total = 0
    for (sid, loc), k in d.offsets.items():
        res = sync.synchronize(tracks[(sid, loc, Spectrum.VISIBLE)], tracks[(sid, loc, Spectrum.THERMAL)],
                               align=True).as_dict()
        interior = [v for v in res if v + k < d.config.frames_per_sequence]
        hit += sum(res[v] == v + k for v in interior)
        total += len(interior)
    assert hit / total >= 0.95


def test_paired_tracks_share_pose_at_offset():
    vis, thr = dataset.paired_tracks(20, 3, 0.0, seed=0)
    for i in range(17):
        np.testing.assert_allclose(vis.frames[i][1].points, thr.frames[i + 3][1].points, atol=1e-9)
