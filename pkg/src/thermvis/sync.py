"""Pair frames of unsynchronised visible and thermal videos by keypoint pose.

Both tracks are mapped onto the canonical template with a per-frame
similarity fit, then each visible frame takes the thermal frame whose
aligned keypoints are nearest.  Several visible frames may share one
thermal frame and temporal order is not enforced.
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AllFramesDegenerate, DegenerateConfiguration, EmptyTrack, ParseError
from .geometry import (
    DEFAULT_TEMPLATE,
    CanonicalTemplate,
    KeypointSet,
    apply_transform,
    solve_similarity,
)

__all__ = [
    "Spectrum",
    "KeypointTrack",
    "PairAssignment",
    "align_track",
    "pair_distance",
    "distance_matrix",
    "synchronize",
    "write_pairs",
    "read_pairs",
]


class Spectrum(enum.Enum):
    VISIBLE = "VISIBLE"
    THERMAL = "THERMAL"


@dataclass(frozen=True, eq=False)
class KeypointTrack:
    frames: tuple[tuple[int, KeypointSet], ...]
    spectrum: Spectrum = Spectrum.VISIBLE
    # frame ids removed by align_track because their fit degenerated
    dropped: tuple[int, ...] = field(default=())

    def __post_init__(self):
        frames = tuple((int(fid), kp) for fid, kp in self.frames)
        if not frames:
            raise EmptyTrack("a keypoint track needs at least one frame")
        ids = [fid for fid, _ in frames]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("frame ids must be strictly increasing")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "dropped", tuple(int(d) for d in self.dropped))

    @property
    def frame_ids(self) -> np.ndarray:
        return np.array([fid for fid, _ in self.frames], dtype=np.int64)

    def stacked(self) -> np.ndarray:
        """``(F, K, 2)`` array of keypoints."""
        return np.stack([kp.points for _, kp in self.frames])

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class PairAssignment:
    pairs: tuple[tuple[int, int, float], ...]

    def as_dict(self) -> dict[int, int]:
        return {v: t for v, t, _ in self.pairs}


def align_track(track: KeypointTrack, tmpl: CanonicalTemplate = DEFAULT_TEMPLATE) -> KeypointTrack:
    """Map every frame's keypoints into the template frame.

    Frames whose similarity fit degenerates are dropped and listed in the
    returned track's ``dropped`` field.
    """
    kept, dropped = [], list(track.dropped)
    for fid, kp in track.frames:
        try:
            t = solve_similarity(kp, tmpl.points)
        except DegenerateConfiguration:
            dropped.append(fid)
            continue
        kept.append((fid, apply_transform(t, kp)))
    if not kept:
        raise AllFramesDegenerate(f"every frame of the {track.spectrum.name} track is degenerate")
    return KeypointTrack(tuple(kept), track.spectrum, tuple(sorted(dropped)))


def _normaliser(n_landmarks: int, tmpl: CanonicalTemplate) -> float:
    return n_landmarks * tmpl.diagonal


def pair_distance(a: KeypointSet, b: KeypointSet, tmpl: CanonicalTemplate = DEFAULT_TEMPLATE) -> float:
    """Stacked l2 distance over landmarks / (landmark count * template diagonal)."""
    d = distance_matrix(a.points[None], b.points[None], tmpl)
    return float(d[0, 0])


def distance_matrix(vis: np.ndarray, thr: np.ndarray, tmpl: CanonicalTemplate = DEFAULT_TEMPLATE) -> np.ndarray:
    """All-pairs normalised distances between ``(V, K, 2)`` and ``(T, K, 2)`` stacks.

    Each row depends only on its own visible frame, so any row partition
    gives bitwise-identical results.
    """
    vis = np.asarray(vis, dtype=np.float64)
    thr = np.asarray(thr, dtype=np.float64)
    k = vis.shape[1]
    thr_flat = thr.reshape(thr.shape[0], -1)
    out = np.empty((vis.shape[0], thr.shape[0]))
    norm = _normaliser(k, tmpl)
    for i, v in enumerate(vis.reshape(vis.shape[0], -1)):
        diff = thr_flat - v
        out[i] = np.sqrt(np.einsum("ij,ij->i", diff, diff)) / norm
    return out


def synchronize(
    visible: KeypointTrack,
    thermal: KeypointTrack,
    tmpl: CanonicalTemplate = DEFAULT_TEMPLATE,
    align: bool = False,
    threads: int = 1,
) -> PairAssignment:
    """Greedy many-to-one matching of visible frames to thermal frames.

    Each visible frame independently takes the thermal frame at minimum
    :func:`pair_distance`; ties go to the lower thermal frame id.  Pass
    ``align=True`` when the tracks are still in image coordinates.
    """
    if len(visible) == 0 or len(thermal) == 0:
        raise EmptyTrack("both tracks must be non-empty")
    if align:
        visible = align_track(visible, tmpl)
        thermal = align_track(thermal, tmpl)
    t_ids = thermal.frame_ids
    order = np.argsort(t_ids, kind="stable")
    t_ids = t_ids[order]
    t_pts = thermal.stacked()[order]
    v_ids = visible.frame_ids
    v_pts = visible.stacked()

    def rows(sl: slice):
        d = distance_matrix(v_pts[sl], t_pts, tmpl)
        best = np.argmin(d, axis=1)
        return [(int(v_ids[sl][i]), int(t_ids[j]), float(d[i, j])) for i, j in enumerate(best)]

    n = len(v_ids)
    threads = max(1, int(threads))
    if threads == 1 or n < 2:
        pairs = rows(slice(0, n))
    else:
        bounds = np.linspace(0, n, min(threads, n) + 1).astype(int)
        slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = [p for chunk in pool.map(rows, slices) for p in chunk]
    pairs.sort(key=lambda p: p[0])
    return PairAssignment(tuple(pairs))


def write_pairs(assignment: PairAssignment, path) -> None:
    lines = [f"{v} {t} {d!r}" for v, t, d in assignment.pairs]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_pairs(path) -> PairAssignment:
    path = Path(path)
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        if len(fields) != 3:
            raise ParseError("expected 'visible_id thermal_id distance'", path, lineno)
        try:
            pairs.append((int(fields[0]), int(fields[1]), float(fields[2])))
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
    return PairAssignment(tuple(pairs))
