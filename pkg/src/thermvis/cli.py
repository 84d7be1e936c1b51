"""Command-line front end: ``thermvis <subcommand> ...``.

Exit status is 0 on success, 1 for usage errors and 2 for data errors.
Diagnostics go to stderr; data goes to files or stdout.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dataset, geometry, landmarks, objectives, sync, verification
from .errors import ThermVisError
from .geometry import DEFAULT_TEMPLATE, Schema


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _existing(flag: str, value) -> Path:
    p = Path(value)
    if not p.exists():
        raise UsageError(f"{flag}: no such file or directory: {value}")
    return p


def _template(args) -> geometry.CanonicalTemplate:
    if args.template is None:
        return DEFAULT_TEMPLATE
    return geometry.read_template(_existing("--template", args.template))


def _write_text(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _fars(value: str) -> tuple[float, float]:
    try:
        fars = tuple(float(v) for v in value.split(","))
    except ValueError:
        raise UsageError(f"--far: expected two comma-separated rates, got {value!r}") from None
    if len(fars) != 2 or not all(0.0 < f < 1.0 for f in fars):
        raise UsageError(f"--far: expected two rates in (0, 1), got {value!r}")
    return fars


def _locations(value: str) -> str:
    names = [v.strip().upper() for v in value.split(",")]
    if not names or any(n not in dataset.Location.__members__ for n in names):
        raise argparse.ArgumentTypeError(f"expected INDOOR and/or OUTDOOR, got {value!r}")
    return ",".join(names)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_align(args) -> int:
    tmpl = _template(args)
    out = Path(args.out)
    if args.manifest is not None:
        mpath = _existing("--manifest", args.manifest)
        manifest = dataset.load_manifest(mpath)
        root = Path(args.images_root) if args.images_root else mpath.parent
        jobs = []
        for s in manifest.subjects:
            for q in s.sequences:
                if args.spectrum != "all" and q.spectrum.value != args.spectrum:
                    continue
                jobs += [(f.image_path, f.keypoints) for f in q.frames if f.keypoints is not None]
    else:
        if args.image is None or args.keypoints is None:
            raise UsageError("align: give --manifest, or --image with --keypoints")
        _, records = landmarks.read_keypoints(_existing("--keypoints", args.keypoints))
        if not records:
            raise UsageError("--keypoints: file holds no records")
        kp = records[0][1]
        if kp.schema is Schema.SEVEN_POINT_RAW:
            kp = landmarks.to_five_point(kp)
        img_path = _existing("--image", args.image)
        root = img_path.parent
        jobs = [(img_path.name, kp)]

    lines = []
    for rel, kp in jobs:
        img = dataset.read_image(root / rel)
        aligned, t = geometry.align_face(img, kp, tmpl)
        target = out / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        dataset.write_image(aligned, target)
        tx, ty = t.translation
        lines.append(f"{rel} {t.scale!r} {t.angle!r} {float(tx)!r} {float(ty)!r}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "transforms.txt").write_text("".join(line + "\n" for line in lines))
    print(f"aligned {len(lines)} images into {out}", file=sys.stderr)
    return 0


def cmd_aggregate_kp(args) -> int:
    schema, records = landmarks.read_keypoints(_existing("--predictions", args.predictions))
    groups: dict[int, list] = {}
    for fid, kp in records:
        groups.setdefault(fid, []).append(kp)
    cfg = landmarks.RansacConfig(args.inlier_threshold, args.residual)
    fused = []
    for fid in sorted(groups):
        kp = landmarks.aggregate_keypoints(groups[fid], cfg)
        if args.five_point and kp.schema is Schema.SEVEN_POINT_RAW:
            kp = landmarks.to_five_point(kp)
        fused.append((fid, kp))
    out_schema = Schema.FIVE_POINT if args.five_point else schema
    landmarks.write_keypoints(args.out, fused, out_schema)
    print(f"fused {len(records)} predictions into {len(fused)} frames", file=sys.stderr)
    return 0


def _track(flag, path, spectrum) -> sync.KeypointTrack:
    _, records = landmarks.read_keypoints(_existing(flag, path))
    frames = [(fid, landmarks.to_five_point(kp) if kp.schema is Schema.SEVEN_POINT_RAW else kp)
              for fid, kp in records]
    frames.sort(key=lambda r: r[0])
    return sync.KeypointTrack(tuple(frames), spectrum)


def cmd_sync(args) -> int:
    tmpl = _template(args)
    vis = _track("--visible", args.visible, sync.Spectrum.VISIBLE)
    thr = _track("--thermal", args.thermal, sync.Spectrum.THERMAL)
    if not args.prealigned:
        vis = sync.align_track(vis, tmpl)
        thr = sync.align_track(thr, tmpl)
        for name, tr in (("visible", vis), ("thermal", thr)):
            if tr.dropped:
                print(f"dropped degenerate {name} frames: {list(tr.dropped)}", file=sys.stderr)
    result = sync.synchronize(vis, thr, tmpl, threads=args.threads)
    sync.write_pairs(result, args.out)
    print(f"paired {len(result.pairs)} visible frames", file=sys.stderr)
    return 0


_PROTOCOLS = {
    "pose-location": lambda: verification.pose_location_protocols(),
    "pose": lambda: [
        verification.ProtocolSpec(verification.CohortFilter(sync.Spectrum.VISIBLE, gp),
                                  verification.CohortFilter(sync.Spectrum.THERMAL, qp))
        for gp in dataset.Pose for qp in dataset.Pose
    ],
    "all": lambda: [verification.ProtocolSpec(verification.CohortFilter(sync.Spectrum.VISIBLE),
                                              verification.CohortFilter(sync.Spectrum.THERMAL))],
}


def cmd_eval_verify(args) -> int:
    fars = _fars(args.far)
    manifest = dataset.load_manifest(_existing("--manifest", args.manifest))
    embs = dataset.read_embeddings(_existing("--embeddings", args.embeddings))
    specs = _PROTOCOLS[args.protocol]()
    split = dataset.Split(args.split)
    specs = [verification.ProtocolSpec(s.gallery, s.query, split) for s in specs]
    cohorts, empty = verification.build_cohorts(manifest, specs)
    for spec in empty:
        print(f"empty cohort skipped: gallery={spec.name[0]!r} query={spec.name[1]!r}", file=sys.stderr)
    if not cohorts:
        raise ThermVisError("no cohort selects any gallery and query frames")

    def lookup(items, role):
        out = []
        for it in items:
            if it.embedding_ref is None or not 0 <= it.embedding_ref < len(embs):
                raise ThermVisError(
                    f"{role} frame {it.subject_id}/{it.image_path} has no valid embedding reference"
                )
            out.append((it.subject_id, embs[it.embedding_ref]))
        return out

    rows = []
    roc_dir = Path(args.roc) if args.roc else None
    if roc_dir is not None:
        roc_dir.mkdir(parents=True, exist_ok=True)
    for c in cohorts:
        scores = verification.score_cohort(lookup(c.gallery, "gallery"), lookup(c.query, "query"),
                                           threads=args.threads)
        report = verification.verification_report(scores, fars)
        g_name, q_name = c.spec.name
        rows.append((g_name, q_name, report))
        if roc_dir is not None:
            stem = f"roc_{g_name}__{q_name}".replace(" ", "_").lower()
            roc = verification.roc_curve(scores)
            (roc_dir / f"{stem}.csv").write_text(verification.roc_csv(roc))
            if args.svg:
                (roc_dir / f"{stem}.svg").write_text(verification.roc_svg(roc, title=f"{g_name} vs {q_name}"))
    text = verification.report_rows_csv(rows)
    if fars != (0.01, 0.05):
        head, rest = text.split("\n", 1)
        text = f"gallery,query,auc,eer,tar{100 * fars[0]:g},tar{100 * fars[1]:g}\n" + rest
    _write_text(args.out, text)
    return 0


def _five(kp):
    return landmarks.to_five_point(kp) if kp.schema is Schema.SEVEN_POINT_RAW else kp


def _paired_keypoints(args):
    _, preds = landmarks.read_keypoints(_existing("--pred", args.pred))
    _, gts = landmarks.read_keypoints(_existing("--gt", args.gt))
    gt_map = {fid: _five(kp) for fid, kp in gts}
    pairs = [(_five(kp), gt_map[fid]) for fid, kp in preds if fid in gt_map]
    if not pairs:
        raise ThermVisError("no frame id is shared by the prediction and ground-truth files")
    return [p for p, _ in pairs], [g for _, g in pairs]


def cmd_eval_keypoints(args) -> int:
    preds, gts = _paired_keypoints(args)
    if args.model:
        model = landmarks.read_offset_model(_existing("--model", args.model))
        preds = [landmarks.apply_offset(model, p) for p in preds]
    errors = [landmarks.nme(p, g) for p, g in zip(preds, gts)]
    report = landmarks.keypoint_report(errors, args.threshold)
    _write_text(args.out, landmarks.report_csv([(args.sequence, args.method, report)]))
    return 0


def cmd_calibrate(args) -> int:
    preds, gts = _paired_keypoints(args)
    mode = landmarks.OffsetMode(args.mode)
    model = landmarks.calibrate_offset(preds, gts, mode)
    landmarks.write_offset_model(model, args.out)
    before = landmarks.calibration_residual(preds, gts)
    after = landmarks.calibration_residual(preds, gts, model)
    print(f"mean landmark error {before:.4f} -> {after:.4f} px", file=sys.stderr)
    return 0


def cmd_loss_check(args) -> int:
    weights = objectives.LossWeights(args.lambda1, args.lambda2, args.lambda3)
    worst = objectives.gradient_audit(args.seed, n_points=args.points, epsilon=args.epsilon)
    rng = np.random.default_rng(args.seed)
    a, b = rng.uniform(0, 1, (16, 16)), rng.uniform(0, 1, (16, 16))
    f_syn, f_real = rng.normal(size=32), rng.normal(size=32)
    logits = rng.normal(size=8)
    lc = objectives.identity_loss(f_syn, f_real, logits, 0, 8, args.epsilon)
    l1 = objectives.l1_pixel_loss(a, b)
    total = objectives.composite_loss(args.lg, l1, lc, weights)
    for name, err in worst.items():
        status = "ok" if err < args.tolerance else "FAIL"
        print(f"{name:14s} max_rel_err={err:.3e} {status}")
    print(f"composite      L={total!r} (lg={args.lg!r} l1={l1!r} lc={lc!r})")
    failed = [k for k, v in worst.items() if not v < args.tolerance]
    if failed:
        print(f"gradient audit failed for: {', '.join(failed)}", file=sys.stderr)
        return 2
    return 0


def cmd_gen_synthetic(args) -> int:
    cfg = dataset.SyntheticConfig(
        n_subjects=args.subjects,
        frames_per_sequence=args.frames,
        articulation_amplitude_deg=args.amplitude,
        noise_sigma_px=args.noise,
        embedding_dim=args.dim,
        seed=args.seed,
        image_size=args.image_size,
        locations=tuple(dataset.Location(v) for v in args.locations.split(",")),
    )
    data = dataset.generate_synthetic(cfg)
    data.write(args.out)
    print(f"wrote {len(data.manifest)} subjects, {len(data.embeddings)} frames to {args.out}",
          file=sys.stderr)
    return 0


def cmd_cohort_average(args) -> int:
    rows = []
    for p in args.inputs:
        rows += verification.read_report_csv(_existing("input", p))
    if not rows:
        raise ThermVisError("no report rows to average")
    avg = verification.cohort_average(r for _, _, r in rows)
    _write_text(args.out, verification.report_rows_csv([("Average", "", avg)], decimals=args.decimals))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="thermvis", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("align", help="warp images onto the canonical template")
    p.add_argument("--manifest")
    p.add_argument("--images-root")
    p.add_argument("--spectrum", choices=["all", "VISIBLE", "THERMAL"], default="all")
    p.add_argument("--image")
    p.add_argument("--keypoints")
    p.add_argument("--template")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("aggregate-kp", help="fuse multi-crop keypoint predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--inlier-threshold", type=float, default=5.0)
    p.add_argument("--residual", choices=["direct", "similarity"], default="direct")
    p.add_argument("--five-point", action="store_true")
    p.set_defaults(func=cmd_aggregate_kp)

    p = sub.add_parser("sync", help="pair visible and thermal frames")
    p.add_argument("--visible", required=True)
    p.add_argument("--thermal", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--template")
    p.add_argument("--prealigned", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser("eval-verify", help="verification report per cohort")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--protocol", choices=sorted(_PROTOCOLS), default="pose-location")
    p.add_argument("--split", choices=[s.value for s in dataset.Split], default="EVAL")
    p.add_argument("--far", default="0.01,0.05")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--roc")
    p.add_argument("--svg", action="store_true")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_eval_verify)

    p = sub.add_parser("eval-keypoints", help="keypoint error table")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--model")
    p.add_argument("--threshold", type=float, default=0.08)
    p.add_argument("--sequence", default="all")
    p.add_argument("--method", default="ours")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_eval_keypoints)

    p = sub.add_parser("calibrate", help="fit a keypoint offset model")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mode", choices=[m.value for m in landmarks.OffsetMode], default="offset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("loss-check", help="finite-difference audit of loss gradients")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=10.0)
    p.add_argument("--lambda3", type=float, default=1.0)
    p.add_argument("--lg", type=float, default=0.0, help="adversarial loss value to fold in")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("gen-synthetic", help="write a synthetic paired dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=40)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--amplitude", type=float, default=60.0)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--locations", default="INDOOR,OUTDOOR", type=_locations)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("cohort-average", help="average report rows")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--decimals", type=int, default=4)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_cohort_average)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads: must be at least 1")
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ThermVisError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
