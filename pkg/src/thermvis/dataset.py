"""Paired multi-spectral face data: manifests, stores, model interfaces and a
synthetic generator.

Manifest files are JSON Lines.  Records appear in hierarchical order::

    {"record":"manifest","version":1}
    {"record":"subject","id":"s0000","split":"EVAL"}
    {"record":"sequence","spectrum":"VISIBLE","pose":"FRONTAL","location":"INDOOR","range_m":1.5}
    {"record":"frame","id":0,"image":"images/...pgm","keypoints":[[x,y],...],"embedding":0}

A sequence belongs to the most recent subject and a frame to the most
recent sequence.  ``keypoints`` (FIVE_POINT) and ``embedding`` (a row index
into the embedding store) may be ``null``.

Embedding stores are binary: ``EMB1``, then little-endian u32 count, u32 dim
and a reserved u32 (zero), followed by ``count * dim`` float32 values in
row-major order.
"""
from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import (
    InvalidConfig,
    InvariantViolation,
    MagicMismatch,
    ParseError,
    TruncatedFile,
)
from .geometry import Image, KeypointSet, Schema
from .sync import KeypointTrack, Spectrum

__all__ = [
    "Spectrum",
    "Pose",
    "Location",
    "Split",
    "Frame",
    "Sequence",
    "Subject",
    "DatasetManifest",
    "load_manifest",
    "write_manifest",
    "dumps_manifest",
    "loads_manifest",
    "read_embeddings",
    "write_embeddings",
    "read_image",
    "write_image",
    "FeatureExtractor",
    "SynthesisModel",
    "ProjectionExtractor",
    "IdentitySynthesis",
    "LinearSynthesis",
    "SyntheticConfig",
    "SyntheticDataset",
    "face_keypoints",
    "generate_synthetic",
    "paired_tracks",
    "video_tracks",
]


class Pose(enum.Enum):
    FRONTAL = "FRONTAL"
    PROFILE = "PROFILE"


class Location(enum.Enum):
    INDOOR = "INDOOR"
    OUTDOOR = "OUTDOOR"


class Split(enum.Enum):
    TRAIN = "TRAIN"
    EVAL = "EVAL"


@dataclass(frozen=True)
class Frame:
    frame_id: int
    image_path: str
    keypoints: KeypointSet | None = None
    embedding_ref: int | None = None


@dataclass(frozen=True)
class Sequence:
    spectrum: Spectrum
    pose: Pose
    location: Location
    range_m: float
    frames: tuple[Frame, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))


@dataclass(frozen=True)
class Subject:
    subject_id: str
    split: Split
    sequences: tuple[Sequence, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))


@dataclass(frozen=True)
class DatasetManifest:
    subjects: tuple[Subject, ...] = ()

    def __post_init__(self):
        subjects = tuple(self.subjects)
        object.__setattr__(self, "subjects", subjects)
        seen = set()
        for s in subjects:
            if s.subject_id in seen:
                raise InvariantViolation(f"subject ids must be unique: {s.subject_id!r} repeats")
            seen.add(s.subject_id)
            for q in s.sequences:
                ids = [f.frame_id for f in q.frames]
                if len(set(ids)) != len(ids):
                    raise InvariantViolation(
                        f"frame ids must be unique within a sequence (subject {s.subject_id!r})"
                    )
                for f in q.frames:
                    if f.keypoints is not None and f.keypoints.schema is not Schema.FIVE_POINT:
                        raise InvariantViolation("manifest keypoints must be FIVE_POINT")

    def subject_ids(self, split: Split | None = None) -> list[str]:
        return [s.subject_id for s in self.subjects if split is None or s.split is split]

    def __len__(self) -> int:
        return len(self.subjects)


# ---------------------------------------------------------------------------
# manifest serialisation
# ---------------------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def dumps_manifest(m: DatasetManifest) -> str:
    lines = [_dump({"record": "manifest", "version": 1})]
    for s in m.subjects:
        lines.append(_dump({"record": "subject", "id": s.subject_id, "split": s.split.value}))
        for q in s.sequences:
            lines.append(_dump({
                "record": "sequence",
                "spectrum": q.spectrum.value,
                "pose": q.pose.value,
                "location": q.location.value,
                "range_m": float(q.range_m),
            }))
            for f in q.frames:
                lines.append(_dump({
                    "record": "frame",
                    "id": int(f.frame_id),
                    "image": f.image_path,
                    "keypoints": None if f.keypoints is None else f.keypoints.points.tolist(),
                    "embedding": None if f.embedding_ref is None else int(f.embedding_ref),
                }))
    return "\n".join(lines) + "\n"


def write_manifest(m: DatasetManifest, path) -> None:
    Path(path).write_text(dumps_manifest(m))


def _field(rec, key, lineno, path, kind=None):
    if key not in rec:
        raise ParseError(f"{rec.get('record')} record lacks field {key!r}", path, lineno)
    value = rec[key]
    if kind is not None:
        try:
            return kind(value)
        except (ValueError, TypeError):
            raise ParseError(f"bad value for {key!r}: {value!r}", path, lineno) from None
    return value


def loads_manifest(text: str, path=None) -> DatasetManifest:
    subjects: list[dict] = []
    header_seen = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path, lineno) from None
        if not isinstance(rec, dict):
            raise ParseError("each line must be a JSON object", path, lineno)
        kind = rec.get("record")
        if kind == "manifest":
            if header_seen:
                raise ParseError("duplicate manifest header", path, lineno)
            if rec.get("version") != 1:
                raise ParseError(f"unsupported manifest version {rec.get('version')!r}", path, lineno)
            header_seen = True
            continue
        if not header_seen:
            raise ParseError("first record must be the manifest header", path, lineno)
        if kind == "subject":
            subjects.append({
                "subject_id": _field(rec, "id", lineno, path, str),
                "split": _field(rec, "split", lineno, path, Split),
                "sequences": [],
            })
        elif kind == "sequence":
            if not subjects:
                raise ParseError("sequence record before any subject", path, lineno)
            subjects[-1]["sequences"].append({
                "spectrum": _field(rec, "spectrum", lineno, path, Spectrum),
                "pose": _field(rec, "pose", lineno, path, Pose),
                "location": _field(rec, "location", lineno, path, Location),
                "range_m": _field(rec, "range_m", lineno, path, float),
                "frames": [],
            })
        elif kind == "frame":
            if not subjects or not subjects[-1]["sequences"]:
                raise ParseError("frame record before any sequence", path, lineno)
            kp = rec.get("keypoints")
            if kp is not None:
                try:
                    kp = KeypointSet(kp, Schema.FIVE_POINT)
                except (ValueError, TypeError) as exc:
                    raise ParseError(f"bad keypoints: {exc}", path, lineno) from None
            emb = rec.get("embedding")
            subjects[-1]["sequences"][-1]["frames"].append(Frame(
                frame_id=_field(rec, "id", lineno, path, int),
                image_path=_field(rec, "image", lineno, path, str),
                keypoints=kp,
                embedding_ref=None if emb is None else _field(rec, "embedding", lineno, path, int),
            ))
        else:
            raise ParseError(f"unknown record type {kind!r}", path, lineno)
    if not header_seen:
        raise ParseError("missing manifest header", path)
    return DatasetManifest(tuple(
        Subject(s["subject_id"], s["split"], tuple(Sequence(**q) for q in s["sequences"]))
        for s in subjects
    ))


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    return loads_manifest(path.read_text(), path)


# ---------------------------------------------------------------------------
# embedding store
# ---------------------------------------------------------------------------

_EMB_MAGIC = b"EMB1"
_EMB_HEADER = struct.Struct("<4sIII")


def write_embeddings(embs, path) -> None:
    arr = np.asarray(embs, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0, arr.shape[1] if arr.ndim == 2 else 0)
    if arr.ndim != 2:
        raise ValueError(f"embeddings must be a (count, dim) array, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_EMB_HEADER.pack(_EMB_MAGIC, arr.shape[0], arr.shape[1], 0))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_embeddings(path) -> np.ndarray:
    """Load an embedding store as a ``(count, dim)`` float32 array."""
    raw = Path(path).read_bytes()
    if raw[:4] != _EMB_MAGIC:
        raise MagicMismatch(f"{path}: not an EMB1 embedding file")
    if len(raw) < _EMB_HEADER.size:
        raise TruncatedFile(f"{path}: header truncated")
    _, count, dim, _ = _EMB_HEADER.unpack_from(raw)
    need = _EMB_HEADER.size + 4 * count * dim
    if len(raw) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=_EMB_HEADER.size)
    return data.reshape(count, dim).astype(np.float32)


# ---------------------------------------------------------------------------
# raster images (binary PGM / PPM)
# ---------------------------------------------------------------------------

def write_image(img: Image, path, maxval: int = 255) -> None:
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    magic = b"P5" if img.channels == 1 else b"P6"
    q = np.rint(img.data * maxval)
    data = q.astype(">u2" if maxval > 255 else np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{img.width} {img.height}\n{maxval}\n".encode())
        fh.write(data)


def read_image(path) -> Image:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedFile(f"{path}: header truncated")
        tokens.append(raw[start:pos])
    pos += 1
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise MagicMismatch(f"{path}: expected binary PGM/PPM")
    w, h, maxval = (int(t) for t in tokens[1:])
    ch = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = w * h * ch * dtype.itemsize
    if len(raw) - pos < need:
        raise TruncatedFile(f"{path}: pixel data truncated")
    arr = np.frombuffer(raw, dtype=dtype, count=w * h * ch, offset=pos).astype(np.float64) / maxval
    return Image(arr.reshape((h, w) if ch == 1 else (h, w, 3)))


# ---------------------------------------------------------------------------
# model interfaces and test doubles
# ---------------------------------------------------------------------------

class FeatureExtractor(Protocol):
    """Image -> embedding; ``extract_flipped`` embeds the horizontal mirror."""

    dim: int

    def extract(self, img: Image) -> np.ndarray: ...

    def extract_flipped(self, img: Image) -> np.ndarray: ...


class SynthesisModel(Protocol):
    """Aligned thermal image -> visible image of the same size, values in [0, 1]."""

    def __call__(self, img: Image) -> Image: ...


class ProjectionExtractor:
    """Fixed random projection of the flattened, mean-centred image."""

    def __init__(self, dim: int, input_size=(128, 128), seed: int = 0):
        w, h = input_size
        self.dim = int(dim)
        self.input_size = (int(w), int(h))
        rng = np.random.default_rng(seed)
        self._proj = rng.normal(0.0, 1.0 / np.sqrt(w * h), size=(self.dim, h * w))

    def _embed(self, data: np.ndarray) -> np.ndarray:
        if data.ndim == 3:
            data = data.mean(axis=2)
        if data.shape != (self.input_size[1], self.input_size[0]):
            raise ValueError(f"extractor expects {self.input_size} images, got {data.shape[::-1]}")
        v = self._proj @ (data - data.mean()).ravel()
        n = np.linalg.norm(v)
        return v / n if n > 0 else v

    def extract(self, img: Image) -> np.ndarray:
        return self._embed(img.data)

    def extract_flipped(self, img: Image) -> np.ndarray:
        return self._embed(img.data[:, ::-1])


class IdentitySynthesis:
    def __call__(self, img: Image) -> Image:
        return img


class LinearSynthesis:
    """``clip(gain * x + bias, 0, 1)``; a stand-in for a learned translator."""

    def __init__(self, gain: float = -1.0, bias: float = 1.0):
        self.gain = float(gain)
        self.bias = float(bias)

    def __call__(self, img: Image) -> Image:
        return Image(np.clip(self.gain * img.data + self.bias, 0.0, 1.0))


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

# Frontal face model in template units: eye centres at x = +-1, nose one unit
# below the eyes, mouth two units below.  z points towards the camera.
_FACE_XY = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-0.8, 2.0], [0.8, 2.0]])
_FACE_Z = np.array([0.0, 0.0, 1.0, 0.3, 0.3])
_EYE_HALF_WIDTH = 0.45
# head rotation centre, behind the face plane
_PIVOT = np.array([0.0, 0.8, -1.2])
_LOCATION_RANGE = {Location.INDOOR: 1.5, Location.OUTDOOR: 100.0}


def _rotation(yaw: float, pitch: float) -> np.ndarray:
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    r_yaw = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    r_pitch = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    return r_yaw @ r_pitch


def face_keypoints(
    yaw_deg: float,
    pitch_deg: float = 0.0,
    center=(64.0, 72.0),
    scale: float = 20.0,
    depth=None,
    schema: Schema = Schema.FIVE_POINT,
) -> KeypointSet:
    """Orthographic projection of the toy 3-D face.

    At zero yaw and pitch the five-point output is a pure scale/translation
    of :data:`DEFAULT_TEMPLATE` (exactly the template for the default
    ``center`` and ``scale``).  ``depth`` overrides per-landmark z, which
    leaves the frontal projection untouched.
    """
    z = _FACE_Z if depth is None else np.asarray(depth, dtype=np.float64)
    xy = _FACE_XY
    if schema is Schema.SEVEN_POINT_RAW:
        eyes = []
        for cx in (-1.0, 1.0):
            outer, inner = cx + np.sign(cx) * _EYE_HALF_WIDTH, cx - np.sign(cx) * _EYE_HALF_WIDTH
            eyes += [[outer, 0.0], [inner, 0.0]] if cx < 0 else [[inner, 0.0], [outer, 0.0]]
        xy = np.vstack([eyes, _FACE_XY[2:]])
        z = np.concatenate([[z[0], z[0], z[1], z[1]], z[2:]])
    pts = np.column_stack([xy, z]) - _PIVOT
    rot = _rotation(np.deg2rad(yaw_deg), np.deg2rad(pitch_deg))
    proj = (pts @ rot.T + _PIVOT)[:, :2]
    # face point (0, 1), the nose at rest, lands on ``center``
    out = np.asarray(center, dtype=np.float64) + scale * (proj - np.array([0.0, 1.0]))
    return KeypointSet(out, schema)


def _render(kp: KeypointSet, size: int, scale: float, thermal: bool) -> Image:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    p = kp.points
    centre = p.mean(axis=0)
    radius = 2.2 * scale
    face = np.exp(-(((xs - centre[0]) ** 2 + ((ys - centre[1]) / 1.3) ** 2) / (2 * radius**2)))
    img = 0.1 + 0.55 * face
    sig = 0.18 * scale
    weights = (-0.35, -0.35, 0.25, -0.25, -0.25)
    for (x, y), wgt in zip(p, weights):
        img += wgt * np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2 * sig**2))
    img = np.clip(img, 0.0, 1.0)
    if thermal:
        # warm skin, cool background, eyes and mouth slightly warmer
        img = np.clip(1.0 - 0.85 * img**0.8, 0.0, 1.0)
    return Image(img)


@dataclass(frozen=True)
class SyntheticConfig:
    n_subjects: int = 40
    frames_per_sequence: int = 16
    articulation_amplitude_deg: float = 60.0
    noise_sigma_px: float = 0.2
    embedding_dim: int = 64
    seed: int = 0
    image_size: int = 128
    eval_fraction: float = 0.2
    max_offset: int = 3
    locations: tuple[Location, ...] = (Location.INDOOR, Location.OUTDOOR)

    def __post_init__(self):
        if self.n_subjects < 1 or self.frames_per_sequence < 1 or self.embedding_dim < 2:
            raise InvalidConfig("subject, frame and embedding counts must be positive")
        if not 0.0 < self.articulation_amplitude_deg < 90.0:
            raise InvalidConfig("articulation amplitude must lie in (0, 90) degrees")
        if self.noise_sigma_px < 0:
            raise InvalidConfig("noise sigma must be non-negative")
        if self.image_size < 32:
            raise InvalidConfig("image size must be at least 32 pixels")
        if not 0.0 <= self.eval_fraction <= 1.0:
            raise InvalidConfig("eval fraction must lie in [0, 1]")
        if self.max_offset < 0:
            raise InvalidConfig("max offset must be non-negative")
        locs = tuple(Location(v) if not isinstance(v, Location) else v for v in self.locations)
        if not locs or len(set(locs)) != len(locs):
            raise InvalidConfig("locations must be a non-empty set")
        object.__setattr__(self, "locations", locs)


@dataclass(frozen=True)
class _FrameSpec:
    keypoints_true: KeypointSet
    scale: float
    thermal: bool


@dataclass
class SyntheticDataset:
    """Generator output.

    ``offsets[(subject_id, location)]`` is the injected thermal delay ``k``:
    visible frame ``i`` shows the same head pose as thermal frame ``i + k``.
    Images are rendered on demand by :meth:`image`.
    """

    config: SyntheticConfig
    manifest: DatasetManifest
    embeddings: np.ndarray
    offsets: dict[tuple[str, Location], int]
    poses: dict[str, tuple[float, float]] = field(default_factory=dict)
    _frames: dict[str, _FrameSpec] = field(default_factory=dict, repr=False)

    def image(self, image_path: str) -> Image:
        spec = self._frames[image_path]
        return _render(spec.keypoints_true, self.config.image_size, spec.scale, spec.thermal)

    def write(self, root) -> None:
        """Write manifest, embeddings, images, per-video keypoint tracks and truth."""
        from .landmarks import write_keypoints

        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        write_manifest(self.manifest, root / "manifest.jsonl")
        write_embeddings(self.embeddings, root / "embeddings.emb")
        for path in sorted(self._frames):
            target = root / path
            target.parent.mkdir(parents=True, exist_ok=True)
            write_image(self.image(path), target)
        kp_dir = root / "keypoints"
        kp_dir.mkdir(exist_ok=True)
        for (sid, loc, spec), track in sorted(video_tracks(self.manifest).items(),
                                              key=lambda kv: (kv[0][0], kv[0][1].value, kv[0][2].value)):
            write_keypoints(kp_dir / f"{sid}_{loc.value.lower()}_{spec.value.lower()}.kp",
                            track.frames, Schema.FIVE_POINT)
        truth = {
            "offsets": [
                {"subject": sid, "location": loc.value, "offset": k}
                for (sid, loc), k in sorted(self.offsets.items(), key=lambda kv: (kv[0][0], kv[0][1].value))
            ]
        }
        (root / "truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")


def _trajectory(t: np.ndarray, amplitude: float) -> tuple[np.ndarray, np.ndarray]:
    # one left-right sweep per video and one up-down excursion; the pair
    # (yaw, pitch) never repeats on t in (-0.5, 1)
    yaw = amplitude * np.sin(2.0 * np.pi * t)
    pitch = amplitude * np.sin(np.pi * t)
    return yaw, pitch


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def generate_synthetic(cfg: SyntheticConfig = SyntheticConfig()) -> SyntheticDataset:
    """Deterministic paired visible/thermal dataset with known ground truth.

    Every subject gets one visible and one thermal video per location.  The
    head follows a yaw/pitch articulation with the configured amplitude; the
    thermal video lags the visible one by a random ``k`` frames.  Frames with
    ``|yaw| <= amplitude / 2`` form the FRONTAL sequence, the rest the
    PROFILE sequence.  Keypoints carry Gaussian detector noise.  Embeddings
    are the subject's identity vector plus a perturbation that grows with
    ``|yaw|``, a per-spectrum shift and frame noise, renormalised.
    """
    rng = np.random.default_rng(cfg.seed)
    amp = cfg.articulation_amplitude_deg
    n_frames = cfg.frames_per_sequence
    size = cfg.image_size
    dim = cfg.embedding_dim
    n_eval = int(round(cfg.eval_fraction * cfg.n_subjects))
    split_order = rng.permutation(cfg.n_subjects)
    eval_ids = set(split_order[:n_eval].tolist())

    subjects = []
    embeddings: list[np.ndarray] = []
    offsets: dict[tuple[str, Location], int] = {}
    poses: dict[str, tuple[float, float]] = {}
    frames_meta: dict[str, _FrameSpec] = {}

    for si in range(cfg.n_subjects):
        sid = f"s{si:04d}"
        identity = _unit(rng.normal(size=dim))
        depth = _FACE_Z + np.concatenate([[0.0, 0.0], rng.normal(0.0, 0.1, size=3)])
        spectral_shift = {spec: rng.normal(size=dim) / np.sqrt(dim) for spec in Spectrum}
        sequences = []
        for loc in cfg.locations:
            k = int(rng.integers(0, min(cfg.max_offset, n_frames - 1) + 1)) if n_frames > 1 else 0
            offsets[(sid, loc)] = k
            scale = (20.0 if loc is Location.INDOOR else 16.0) * rng.uniform(0.95, 1.05)
            centre = np.array([size / 2.0, size * 72.0 / 128.0]) + rng.uniform(-3.0, 3.0, size=2)
            frame_noise = 0.3 if loc is Location.INDOOR else 0.5
            for spec in (Spectrum.VISIBLE, Spectrum.THERMAL):
                lag = k if spec is Spectrum.THERMAL else 0
                t = (np.arange(n_frames) - lag) / n_frames
                yaw, pitch = _trajectory(t, amp)
                by_pose: dict[Pose, list[Frame]] = {Pose.FRONTAL: [], Pose.PROFILE: []}
                for fid in range(n_frames):
                    true_kp = face_keypoints(yaw[fid], pitch[fid], centre, scale, depth)
                    noisy = true_kp.points + rng.normal(0.0, cfg.noise_sigma_px, size=(5, 2))
                    pose = Pose.FRONTAL if abs(yaw[fid]) <= amp / 2.0 else Pose.PROFILE
                    emb = (identity
                           + 1.5 * (abs(yaw[fid]) / amp) ** 1.5 * _unit(rng.normal(size=dim))
                           + 0.25 * spectral_shift[spec]
                           + frame_noise * rng.normal(size=dim) / np.sqrt(dim))
                    embeddings.append(_unit(emb))
                    path = f"images/{sid}/{loc.value.lower()}_{spec.value.lower()}_{fid:04d}.pgm"
                    frames_meta[path] = _FrameSpec(true_kp, scale, spec is Spectrum.THERMAL)
                    poses[path] = (float(yaw[fid]), float(pitch[fid]))
                    by_pose[pose].append(Frame(fid, path, KeypointSet(noisy), len(embeddings) - 1))
                for pose in (Pose.FRONTAL, Pose.PROFILE):
                    if by_pose[pose]:
                        sequences.append(Sequence(spec, pose, loc, _LOCATION_RANGE[loc], tuple(by_pose[pose])))
        split = Split.EVAL if si in eval_ids else Split.TRAIN
        subjects.append(Subject(sid, split, tuple(sequences)))

    emb = np.stack(embeddings).astype(np.float32) if embeddings else np.zeros((0, dim), np.float32)
    return SyntheticDataset(cfg, DatasetManifest(tuple(subjects)), emb, offsets, poses, frames_meta)


def video_tracks(manifest: DatasetManifest) -> dict[tuple[str, Location, Spectrum], KeypointTrack]:
    """Merge pose-split sequences back into one keypoint track per video.

    A video is identified by subject, location, range and spectrum; frames
    without keypoints are skipped.
    """
    merged: dict[tuple[str, Location, Spectrum], dict[int, KeypointSet]] = {}
    for s in manifest.subjects:
        for q in s.sequences:
            frames = merged.setdefault((s.subject_id, q.location, q.spectrum), {})
            for f in q.frames:
                if f.keypoints is not None:
                    frames[f.frame_id] = f.keypoints
    return {
        key: KeypointTrack(tuple(sorted(frames.items())), key[2])
        for key, frames in merged.items() if frames
    }


def paired_tracks(
    n_frames: int,
    offset: int,
    noise_sigma_px: float,
    seed: int,
    amplitude_deg: float = 60.0,
    scale: float = 100.0,
    image_size: int = 1024,
) -> tuple[KeypointTrack, KeypointTrack]:
    """Visible and thermal keypoint tracks of one articulating head.

    The thermal track lags by ``offset`` frames: visible frame ``i`` and
    thermal frame ``i + offset`` share a pose.  Noise is drawn independently
    for each spectrum.
    """
    rng = np.random.default_rng(seed)
    depth = _FACE_Z + np.concatenate([[0.0, 0.0], rng.normal(0.0, 0.1, size=3)])
    centre = np.array([image_size / 2.0, image_size / 2.0])
    tracks = []
    for spec, lag in ((Spectrum.VISIBLE, 0), (Spectrum.THERMAL, offset)):
        t = (np.arange(n_frames) - lag) / n_frames
        yaw, pitch = _trajectory(t, amplitude_deg)
        frames = []
        for fid in range(n_frames):
            kp = face_keypoints(yaw[fid], pitch[fid], centre, scale, depth)
            frames.append((fid, kp.with_points(kp.points + rng.normal(0.0, noise_sigma_px, size=(5, 2)))))
        tracks.append(KeypointTrack(tuple(frames), spec))
    return tracks[0], tracks[1]
