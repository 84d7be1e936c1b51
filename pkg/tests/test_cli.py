import hashlib
from pathlib import Path

import numpy as np
import pytest

from thermvis import cli, dataset, landmarks, sync, verification
from thermvis.geometry import DEFAULT_TEMPLATE, KeypointSet, Schema

DATA = Path(__file__).parent / "data"
BASE = DEFAULT_TEMPLATE.points.points


@pytest.fixture(scope="module")
def small_ds(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    assert cli.run(["gen-synthetic", "--seed", "1", "--subjects", "10", "--frames", "8", "--out", str(root)]) == 0
    return root


def _digest(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


# -- exit codes -------------------------------------------------------------------

def test_usage_errors_exit_1(capsys):
    assert cli.run([]) == 1
    assert cli.run(["gen-synthetic", "--out", "x"]) == 1
    assert "--seed" in capsys.readouterr().err
    assert cli.run(["sync", "--visible", "nope.kp", "--thermal", "nope.kp", "--out", "o"]) == 1
    assert "--visible" in capsys.readouterr().err
    assert cli.run(["eval-verify", "--manifest", "m", "--embeddings", "e", "--far", "0.5"]) == 1
    assert "--far" in capsys.readouterr().err
    assert cli.run(["sync", "--visible", "a", "--thermal", "b", "--out", "c", "--threads", "0"]) == 1


def test_data_errors_exit_2_and_cite_line(tmp_path, capsys):
    bad = tmp_path / "bad.kp"
    bad.write_text("schema FIVE_POINT\n0 1 2 3\n")
    assert cli.run(["aggregate-kp", "--predictions", str(bad), "--out", str(tmp_path / "o.kp")]) == 2
    err = capsys.readouterr().err
    assert "bad.kp:2" in err
    report = tmp_path / "r.csv"
    report.write_text("gallery,query,auc,eer,tar1,tar5\na,b,1,2,3\n")
    assert cli.run(["cohort-average", str(report)]) == 2
    assert "r.csv:2" in capsys.readouterr().err


# -- subcommands ----------------------------------------------------------------

def test_loss_check(capsys):
    assert cli.run(["loss-check", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    for name in ("cross_entropy", "cosine", "l1", "mlp"):
        assert name in out
    assert "FAIL" not in out


def test_cohort_average_table(capsys):
    assert cli.run(["cohort-average", str(DATA / "arl_vtf_cohorts.csv"), "--decimals", "1"]) == 0
    assert capsys.readouterr().out.splitlines()[1] == "Average,,97.7,6.9,77.2,90.5"


def test_gen_synthetic_then_eval_verify(tmp_path):
    ds = tmp_path / "ds"
    assert cli.run(["gen-synthetic", "--seed", "1", "--out", str(ds)]) == 0
    out = tmp_path / "rep.csv"
    assert cli.run(["eval-verify", "--manifest", str(ds / "manifest.jsonl"),
                    "--embeddings", str(ds / "embeddings.emb"), "--protocol", "all",
                    "--out", str(out)]) == 0
    [(g, q, r)] = verification.read_report_csv(out)
    assert (g, q) == ("All", "All") and r.auc > 99.0


def test_eval_verify_roc_and_empty_cohorts(tmp_path, capsys):
    ds = tmp_path / "ds"
    assert cli.run(["gen-synthetic", "--seed", "2", "--subjects", "5", "--frames", "6", "--locations", "INDOOR",
                    "--out", str(ds)]) == 0
    out = tmp_path / "rep.csv"
    assert cli.run(["eval-verify", "--manifest", str(ds / "manifest.jsonl"), "--embeddings",
                    str(ds / "embeddings.emb"), "--split", "TRAIN", "--out", str(out),
                    "--roc", str(tmp_path / "roc"), "--svg"]) == 0
    err = capsys.readouterr().err
    assert err.count("empty cohort") == 12
    rows = verification.read_report_csv(out)
    assert len(rows) == 4 and all("Outdoor" not in g + q for g, q, _ in rows)
    assert len(list((tmp_path / "roc").glob("*.csv"))) == len(rows)
    assert len(list((tmp_path / "roc").glob("*.svg"))) == len(rows)


def test_align_outputs(small_ds, tmp_path):
    out = tmp_path / "al"
    assert cli.run(["align", "--manifest", str(small_ds / "manifest.jsonl"), "--spectrum", "THERMAL",
                    "--out", str(out)]) == 0
    lines = (out / "transforms.txt").read_text().splitlines()
    assert len(lines) == 10 * 2 * 8
    assert all("_thermal_" in ln.split()[0] for ln in lines)
    img = dataset.read_image(out / lines[0].split()[0])
    assert img.shape == (128, 128)


def test_align_single_image_with_template(small_ds, tmp_path):
    tmpl = tmp_path / "t.txt"
    tmpl.write_text("size 64 64\n22 26\n42 26\n32 36\n24 46\n40 46\n")
    m = dataset.load_manifest(small_ds / "manifest.jsonl")
    f = m.subjects[0].sequences[0].frames[0]
    kp = tmp_path / "one.kp"
    landmarks.write_keypoints(kp, [(f.frame_id, f.keypoints)])
    assert cli.run(["align", "--image", str(small_ds / f.image_path), "--keypoints", str(kp),
                    "--template", str(tmpl), "--out", str(tmp_path / "o")]) == 0
    name = Path(f.image_path).name
    assert dataset.read_image(tmp_path / "o" / name).shape == (64, 64)


def test_sync_threads_identical(small_ds, tmp_path):
    vis = small_ds / "keypoints" / "s0000_indoor_visible.kp"
    thr = small_ds / "keypoints" / "s0000_indoor_thermal.kp"
    outs = []
    for t in (1, 4):
        o = tmp_path / f"p{t}.txt"
        assert cli.run(["sync", "--visible", str(vis), "--thermal", str(thr), "--out", str(o),
                        "--threads", str(t)]) == 0
        outs.append(o.read_bytes())
    assert outs[0] == outs[1]
    assert len(sync.read_pairs(tmp_path / "p1.txt").pairs) == 8


def test_aggregate_kp(tmp_path):
    rng = np.random.default_rng(0)
    raw = np.array([[39, 52], [49, 52], [79, 52], [89, 52], [64, 72], [48, 92], [80, 92]], float)
    recs = []
    for fid in (0, 1):
        recs += [(fid, KeypointSet(raw + rng.normal(0, 0.3, raw.shape), Schema.SEVEN_POINT_RAW)) for _ in range(4)]
        recs.append((fid, KeypointSet(raw + 60, Schema.SEVEN_POINT_RAW)))
    landmarks.write_keypoints(tmp_path / "p.kp", recs)
    assert cli.run(["aggregate-kp", "--predictions", str(tmp_path / "p.kp"), "--out", str(tmp_path / "f.kp"),
                    "--five-point"]) == 0
    schema, fused = landmarks.read_keypoints(tmp_path / "f.kp")
    assert schema is Schema.FIVE_POINT and [f for f, _ in fused] == [0, 1]
    assert all(np.max(np.abs(kp.points - BASE)) < 1.0 for _, kp in fused)


def test_calibrate_then_eval_keypoints(tmp_path, capsys):
    rng = np.random.default_rng(1)
    gts = [(i, KeypointSet(BASE + rng.normal(0, 3, BASE.shape))) for i in range(20)]
    preds = [(i, KeypointSet(g.points + [2, -1] + rng.normal(0, 0.2, BASE.shape))) for i, g in gts]
    landmarks.write_keypoints(tmp_path / "gt.kp", gts)
    landmarks.write_keypoints(tmp_path / "pr.kp", preds)
    for mode in ("offset", "affine"):
        model = tmp_path / f"{mode}.txt"
        assert cli.run(["calibrate", "--pred", str(tmp_path / "pr.kp"), "--gt", str(tmp_path / "gt.kp"),
                        "--mode", mode, "--out", str(model)]) == 0
        assert landmarks.read_offset_model(model).mode.value == mode
    capsys.readouterr()
    assert cli.run(["eval-keypoints", "--pred", str(tmp_path / "pr.kp"), "--gt", str(tmp_path / "gt.kp")]) == 0
    raw_row = capsys.readouterr().out.splitlines()[1].split(",")
    assert cli.run(["eval-keypoints", "--pred", str(tmp_path / "pr.kp"), "--gt", str(tmp_path / "gt.kp"),
                    "--model", str(tmp_path / "offset.txt"), "--method", "calibrated"]) == 0
    cal_row = capsys.readouterr().out.splitlines()[1].split(",")
    assert cal_row[1] == "calibrated" and float(cal_row[2]) < float(raw_row[2])


# -- determinism and purity ---------------------------------------------------------

def test_gen_synthetic_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert cli.run(["gen-synthetic", "--seed", "5", "--subjects", "3", "--frames", "4",
                        "--out", str(tmp_path / name)]) == 0
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_inputs_not_mutated(small_ds, tmp_path):
    before = _digest(small_ds)
    cli.run(["align", "--manifest", str(small_ds / "manifest.jsonl"), "--out", str(tmp_path / "al")])
    cli.run(["eval-verify", "--manifest", str(small_ds / "manifest.jsonl"),
             "--embeddings", str(small_ds / "embeddings.emb"), "--out", str(tmp_path / "r.csv")])
    assert _digest(small_ds) == before
