"""Multi-crop keypoint aggregation, offset calibration and keypoint metrics."""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import (
    BoxOutsideImage,
    DegenerateConfiguration,
    EmptyInput,
    InsufficientSamples,
    LengthMismatch,
    ParseError,
    SchemaMismatch,
    ZeroInterOcular,
)
from .geometry import Image, KeypointSet, Schema, solve_similarity

__all__ = [
    "Box",
    "KeypointPredictor",
    "RansacConfig",
    "OffsetMode",
    "OffsetModel",
    "KeypointReport",
    "five_random_crops",
    "predict_multi_crop",
    "aggregate_keypoints",
    "to_five_point",
    "calibrate_offset",
    "apply_offset",
    "calibration_residual",
    "inter_ocular",
    "nme",
    "keypoint_report",
    "read_keypoints",
    "write_keypoints",
    "read_offset_model",
    "write_offset_model",
    "report_csv",
]

# raw eye-corner index pairs -> five-point eye centres
_LEFT_EYE = (0, 1)
_RIGHT_EYE = (2, 3)
_PASS_THROUGH = (4, 5, 6)


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle ``(x, y, width, height)`` in pixels."""

    x: float
    y: float
    w: float
    h: float

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def contains(self, px: float, py: float) -> bool:
        return self.x <= px <= self.x + self.w and self.y <= py <= self.y + self.h


class KeypointPredictor(Protocol):
    """Maps an image crop to seven raw keypoints in full-image coordinates.

    Implementations need not be thread-safe; callers serialise access.
    """

    def __call__(self, img: Image, crop: Box) -> KeypointSet: ...


def five_random_crops(
    face_box: Box,
    img_size: tuple[int, int],
    rng_seed: int,
    jitter: float = 0.1,
    n: int = 5,
) -> list[Box]:
    """Jittered copies of ``face_box`` for test-time augmentation.

    Each crop shifts the box centre by up to ``jitter`` of its width/height
    and rescales it by a factor in ``[1 - jitter, 1 + jitter]``, then clips
    to the image.  ``jitter`` must stay below 0.45 so every crop keeps the
    original centre.
    """
    width, height = img_size
    b = face_box
    if b.w <= 0 or b.h <= 0 or b.x < 0 or b.y < 0 or b.x + b.w > width or b.y + b.h > height:
        raise BoxOutsideImage(f"{b} does not fit inside {width}x{height}")
    if not 0.0 <= jitter < 0.45:
        raise ValueError("jitter must lie in [0, 0.45)")
    rng = np.random.default_rng(rng_seed)
    cx, cy = b.center
    crops = []
    for _ in range(n):
        dx, dy = rng.uniform(-jitter, jitter, size=2)
        sx, sy = rng.uniform(1.0 - jitter, 1.0 + jitter, size=2)
        w, h = b.w * sx, b.h * sy
        ncx, ncy = cx + dx * b.w, cy + dy * b.h
        x0 = max(0.0, ncx - w / 2.0)
        y0 = max(0.0, ncy - h / 2.0)
        x1 = min(float(width), ncx + w / 2.0)
        y1 = min(float(height), ncy + h / 2.0)
        crops.append(Box(x0, y0, x1 - x0, y1 - y0))
    return crops


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold: float = 5.0
    # "direct": mean landmark distance in image coordinates.
    # "similarity": residual after fitting hypothesis -> candidate.
    residual: str = "direct"


def _pair_residual(h: np.ndarray, c: np.ndarray, mode: str) -> float:
    if mode == "direct":
        return float(np.mean(np.linalg.norm(h - c, axis=1)))
    if mode == "similarity":
        try:
            t = solve_similarity(h, c)
        except DegenerateConfiguration:
            return float("inf")
        return float(np.mean(np.linalg.norm(t(h) - c, axis=1)))
    raise ValueError(f"unknown residual mode {mode!r}")


def aggregate_keypoints(
    preds: Sequence[KeypointSet], config: RansacConfig = RansacConfig()
) -> KeypointSet:
    """Fuse several predictions of the same face into one keypoint set.

    Every prediction is tried as the hypothesis; its inliers are the
    predictions whose mean per-landmark distance to it is below
    ``config.inlier_threshold``.  The largest inlier set wins (ties: lower
    total residual, then lower hypothesis index) and its coordinate-wise
    mean is returned.  Without any consensus of two or more predictions the
    per-landmark, per-axis median is returned instead.
    """
    preds = list(preds)
    if not preds:
        raise EmptyInput("aggregate_keypoints needs at least one prediction")
    schema = preds[0].schema
    if any(p.schema is not schema for p in preds):
        raise SchemaMismatch("predictions use mixed schemas")
    stack = np.stack([p.points for p in preds])
    n = len(preds)
    res = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                res[i, j] = _pair_residual(stack[i], stack[j], config.residual)

    best_key = None
    best_members = None
    for i in range(n):
        members = np.flatnonzero(res[i] < config.inlier_threshold)
        key = (-len(members), float(res[i, members].sum()), i)
        if best_key is None or key < best_key:
            best_key, best_members = key, members
    if len(best_members) < 2:
        return KeypointSet(np.median(stack, axis=0), schema)
    return KeypointSet(stack[best_members].mean(axis=0), schema)


def predict_multi_crop(
    predictor: KeypointPredictor,
    img: Image,
    face_box: Box,
    rng_seed: int,
    config: RansacConfig = RansacConfig(),
    jitter: float = 0.1,
) -> KeypointSet:
    """Run ``predictor`` on five jittered crops and aggregate the results."""
    crops = five_random_crops(face_box, (img.width, img.height), rng_seed, jitter)
    return aggregate_keypoints([predictor(img, c) for c in crops], config)


def to_five_point(raw: KeypointSet) -> KeypointSet:
    """Eye centres from eye-corner midpoints; nose and mouth pass through."""
    if raw.schema is not Schema.SEVEN_POINT_RAW:
        raise SchemaMismatch("to_five_point expects SEVEN_POINT_RAW keypoints")
    p = raw.points
    out = np.vstack(
        [
            (p[_LEFT_EYE[0]] + p[_LEFT_EYE[1]]) / 2.0,
            (p[_RIGHT_EYE[0]] + p[_RIGHT_EYE[1]]) / 2.0,
            p[list(_PASS_THROUGH)],
        ]
    )
    return KeypointSet(out, Schema.FIVE_POINT)


class OffsetMode(enum.Enum):
    OFFSET_ONLY = "offset"
    AFFINE = "affine"


@dataclass(frozen=True, eq=False)
class OffsetModel:
    """Per-landmark correction ``p -> matrices[k] @ p + offsets[k]``."""

    matrices: np.ndarray  # (K, 2, 2)
    offsets: np.ndarray  # (K, 2)
    mode: OffsetMode = OffsetMode.OFFSET_ONLY

    def __post_init__(self):
        m = np.array(self.matrices, dtype=np.float64)
        o = np.array(self.offsets, dtype=np.float64)
        if m.ndim != 3 or m.shape[1:] != (2, 2) or o.shape != (m.shape[0], 2):
            raise ValueError("offset model needs (K,2,2) matrices and (K,2) offsets")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(o))):
            raise ValueError("offset model entries must be finite")
        object.__setattr__(self, "matrices", m)
        object.__setattr__(self, "offsets", o)

    @classmethod
    def identity(cls, k: int = 5) -> "OffsetModel":
        return cls(np.tile(np.eye(2), (k, 1, 1)), np.zeros((k, 2)))


def _stack_five(sets, what) -> np.ndarray:
    out = []
    for s in sets:
        if s.schema is not Schema.FIVE_POINT:
            raise SchemaMismatch(f"{what} must be FIVE_POINT")
        out.append(s.points)
    return np.stack(out) if out else np.zeros((0, 5, 2))


def calibrate_offset(preds, gts, mode: OffsetMode = OffsetMode.OFFSET_ONLY) -> OffsetModel:
    """Least-squares per-landmark map from predicted to ground-truth points."""
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(gts)} ground truths")
    need = 1 if mode is OffsetMode.OFFSET_ONLY else 3
    if len(preds) < need:
        raise InsufficientSamples(f"{mode.name} needs at least {need} samples")
    p = _stack_five(preds, "predictions")
    g = _stack_five(gts, "ground truths")
    k = p.shape[1]
    if mode is OffsetMode.OFFSET_ONLY:
        return OffsetModel(np.tile(np.eye(2), (k, 1, 1)), (g - p).mean(axis=0), mode)
    mats = np.empty((k, 2, 2))
    offs = np.empty((k, 2))
    for j in range(k):
        design = np.hstack([p[:, j, :], np.ones((p.shape[0], 1))])
        coef, *_ = np.linalg.lstsq(design, g[:, j, :], rcond=None)
        mats[j] = coef[:2].T
        offs[j] = coef[2]
    return OffsetModel(mats, offs, mode)


def apply_offset(model: OffsetModel, pred: KeypointSet) -> KeypointSet:
    if pred.schema is not Schema.FIVE_POINT:
        raise SchemaMismatch("apply_offset expects FIVE_POINT keypoints")
    pts = np.einsum("kij,kj->ki", model.matrices, pred.points) + model.offsets
    return KeypointSet(pts, Schema.FIVE_POINT)


def calibration_residual(preds, gts, model: OffsetModel | None = None) -> float:
    """Mean landmark distance between (optionally corrected) predictions and truth."""
    errs = []
    for p, g in zip(preds, gts):
        if model is not None:
            p = apply_offset(model, p)
        errs.append(np.linalg.norm(p.points - g.points, axis=1))
    return float(np.mean(errs))


def inter_ocular(kp: KeypointSet) -> float:
    if kp.schema is not Schema.FIVE_POINT:
        raise SchemaMismatch("inter-ocular distance needs FIVE_POINT keypoints")
    return float(np.linalg.norm(kp.points[1] - kp.points[0]))


def nme(pred: KeypointSet, gt: KeypointSet) -> float:
    """Mean landmark error normalised by the ground-truth inter-ocular distance."""
    if pred.schema is not Schema.FIVE_POINT or gt.schema is not Schema.FIVE_POINT:
        raise SchemaMismatch("nme expects FIVE_POINT keypoints")
    iod = inter_ocular(gt)
    if iod <= 0.0:
        raise ZeroInterOcular("ground-truth eye centres coincide")
    return float(np.mean(np.linalg.norm(pred.points - gt.points, axis=1)) / iod)


@dataclass(frozen=True)
class KeypointReport:
    mean: float
    std: float
    median: float
    mad: float
    max_error: float
    auc: float
    failure_rate: float
    n: int
    threshold: float = 0.08


def keypoint_report(errors, threshold: float = 0.08) -> KeypointReport:
    """Summary statistics of normalised keypoint errors.

    ``auc`` is the area under the cumulative error distribution on
    ``[0, threshold]`` divided by ``threshold``; ``failure_rate`` counts
    errors strictly above ``threshold``.  ``std`` is the population standard
    deviation and ``mad`` the unscaled median absolute deviation.
    """
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise EmptyInput("keypoint_report needs at least one error")
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be finite and non-negative")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    med = float(np.median(e))
    # integral of the CED on [0, T] equals mean(max(0, T - e))
    auc = float(np.sum(np.maximum(threshold - e, 0.0)) / e.size / threshold)
    return KeypointReport(
        mean=float(e.mean()),
        std=float(e.std()),
        median=med,
        mad=float(np.median(np.abs(e - med))),
        max_error=float(e.max()),
        auc=auc,
        failure_rate=float(np.count_nonzero(e > threshold) / e.size),
        n=int(e.size),
        threshold=threshold,
    )


def report_csv(rows: Sequence[tuple[str, str, KeypointReport]]) -> str:
    """Render ``(sequence, method, report)`` rows in keypoint-table column order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    t = rows[0][2].threshold if rows else 0.08
    writer.writerow(
        ["sequence", "method", "mean", "std", "median", "mad", "max_error",
         f"auc_{t:g}", f"failure_rate_{t:g}", "n"]
    )
    for seq, method, r in rows:
        writer.writerow(
            [seq, method] + [f"{v:.6f}" for v in
                             (r.mean, r.std, r.median, r.mad, r.max_error, r.auc, r.failure_rate)]
            + [r.n]
        )
    return buf.getvalue()


def read_keypoints(path) -> tuple[Schema, list[tuple[int, KeypointSet]]]:
    """Read a keypoint file.

    The first non-comment line is ``schema FIVE_POINT`` or
    ``schema SEVEN_POINT_RAW``; each following line is
    ``frame_id x1 y1 ... xK yK``.  A frame id may repeat (e.g. one record per
    crop), and records keep file order.
    """
    path = Path(path)
    schema = None
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields or fields[0].startswith("#"):
                continue
            if schema is None:
                if len(fields) != 2 or fields[0] != "schema" or fields[1] not in Schema.__members__:
                    raise ParseError("expected header 'schema FIVE_POINT|SEVEN_POINT_RAW'", path, lineno)
                schema = Schema[fields[1]]
                continue
            if len(fields) != 1 + 2 * schema.size:
                raise ParseError(
                    f"expected frame id and {2 * schema.size} coordinates, got {len(fields)} fields",
                    path, lineno,
                )
            try:
                fid = int(fields[0])
                coords = np.array([float(v) for v in fields[1:]]).reshape(-1, 2)
                records.append((fid, KeypointSet(coords, schema)))
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
    if schema is None:
        raise ParseError("missing schema header", path)
    return schema, records


def write_keypoints(path, records, schema: Schema | None = None) -> None:
    records = list(records)
    if schema is None:
        if not records:
            raise ValueError("schema required for an empty keypoint file")
        schema = records[0][1].schema
    lines = [f"schema {schema.name}"]
    for fid, kp in records:
        if kp.schema is not schema:
            raise SchemaMismatch("mixed schemas in keypoint file")
        lines.append(" ".join([str(int(fid))] + [repr(float(v)) for v in kp.points.ravel()]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_offset_model(model: OffsetModel, path) -> None:
    """Text format: ``offset_model MODE K`` then ``a11 a12 a21 a22 b1 b2`` per landmark."""
    k = model.offsets.shape[0]
    lines = [f"offset_model {model.mode.name} {k}"]
    for m, o in zip(model.matrices, model.offsets):
        lines.append(" ".join(repr(float(v)) for v in (*m.ravel(), *o)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_offset_model(path) -> OffsetModel:
    path = Path(path)
    lines = [(i, ln.split()) for i, ln in enumerate(path.read_text().splitlines(), start=1)]
    lines = [(i, f) for i, f in lines if f and not f[0].startswith("#")]
    if not lines or lines[0][1][0] != "offset_model" or len(lines[0][1]) != 3:
        raise ParseError("expected header 'offset_model MODE K'", path, lines[0][0] if lines else None)
    try:
        mode = OffsetMode[lines[0][1][1]]
        k = int(lines[0][1][2])
    except (KeyError, ValueError):
        raise ParseError("bad offset_model header", path, lines[0][0]) from None
    body = lines[1:]
    if len(body) != k:
        raise ParseError(f"expected {k} landmark rows, got {len(body)}", path)
    mats, offs = [], []
    for lineno, f in body:
        if len(f) != 6:
            raise ParseError("expected 6 values per landmark row", path, lineno)
        try:
            v = [float(x) for x in f]
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
        mats.append(np.reshape(v[:4], (2, 2)))
        offs.append(v[4:])
    return OffsetModel(np.array(mats), np.array(offs), mode)
