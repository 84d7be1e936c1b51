"""Verification scoring, ROC metrics, evaluation protocols and cohort tables.

Scores are cosine similarities (higher means more alike) and a pair is
accepted when ``score >= threshold``.  All rates in a
:class:`VerificationReport` are percentages.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence as Seq

import numpy as np

from .dataset import DatasetManifest, FeatureExtractor, Location, Pose, Split
from .errors import (
    DimMismatch,
    EmptyClass,
    EmptyInput,
    EmptySelection,
    NoGenuinePairs,
    ParseError,
    ZeroVector,
)
from .geometry import Image
from .sync import Spectrum

__all__ = [
    "ScoreSet",
    "Roc",
    "VerificationReport",
    "CohortFilter",
    "ProtocolSpec",
    "ProtocolItem",
    "CohortSelection",
    "match_score",
    "fuse_flip",
    "double_flip_embedding",
    "roc_curve",
    "auc_score",
    "equal_error_rate",
    "tar_at_far",
    "verification_report",
    "score_cohort",
    "cohort_average",
    "build_protocol",
    "build_cohorts",
    "pose_location_protocols",
    "report_rows_csv",
    "read_report_csv",
    "roc_csv",
    "roc_svg",
]


@dataclass(frozen=True, eq=False)
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.genuine, dtype=np.float64).ravel()
        i = np.asarray(self.impostor, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(i))):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "genuine", g)
        object.__setattr__(self, "impostor", i)


@dataclass(frozen=True)
class VerificationReport:
    auc: float
    eer: float
    tar_at_far1: float
    tar_at_far5: float
    n_genuine: int
    n_impostor: int


def _unit_rows(x, what: str) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ZeroVector(f"{what} contains a zero embedding")
    return x / norms


def match_score(a, b) -> float:
    """Cosine similarity in ``[-1, 1]``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimMismatch(f"embedding dims differ: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def fuse_flip(e, e_flipped) -> np.ndarray:
    """Average an embedding with its mirrored-image twin and renormalise."""
    a = np.asarray(e, dtype=np.float64).ravel()
    b = np.asarray(e_flipped, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimMismatch(f"embedding dims differ: {a.size} vs {b.size}")
    m = (a + b) / 2.0
    n = np.linalg.norm(m)
    if n == 0.0:
        raise ZeroVector("flip-averaged embedding is zero")
    return m / n


def double_flip_embedding(extractor: FeatureExtractor, img: Image) -> np.ndarray:
    return fuse_flip(extractor.extract(img), extractor.extract_flipped(img))


@dataclass(frozen=True, eq=False)
class Roc:
    """Empirical ROC: one point per distinct score plus the origin.

    ``thresholds[0]`` is ``+inf``; ``far`` and ``tar`` are fractions and
    non-decreasing along the arrays.
    """

    thresholds: np.ndarray
    far: np.ndarray
    tar: np.ndarray


def _check(scores: ScoreSet):
    if scores.genuine.size == 0 or scores.impostor.size == 0:
        raise EmptyClass("need at least one genuine and one impostor score")


def roc_curve(scores: ScoreSet) -> Roc:
    _check(scores)
    g = np.sort(scores.genuine)
    i = np.sort(scores.impostor)
    thr = np.unique(np.concatenate([g, i]))[::-1]
    tar = (g.size - np.searchsorted(g, thr, side="left")) / g.size
    far = (i.size - np.searchsorted(i, thr, side="left")) / i.size
    return Roc(
        np.concatenate([[np.inf], thr]),
        np.concatenate([[0.0], far]),
        np.concatenate([[0.0], tar]),
    )


def auc_score(scores: ScoreSet) -> float:
    """P(genuine > impostor) + 0.5 P(tie), as a percentage."""
    _check(scores)
    i = np.sort(scores.impostor)
    below = np.searchsorted(i, scores.genuine, side="left")
    upto = np.searchsorted(i, scores.genuine, side="right")
    wins = int(below.sum())
    ties = int((upto - below).sum())
    return 100.0 * (wins + 0.5 * ties) / (scores.genuine.size * scores.impostor.size)


def equal_error_rate(roc: Roc) -> float:
    """Crossing of FAR and FRR = 1 - TAR, linearly interpolated along the ROC."""
    diff = roc.far - (1.0 - roc.tar)
    idx = int(np.argmax(diff >= 0.0))
    if diff[idx] == 0.0 or idx == 0:
        return 100.0 * float(roc.far[idx])
    d0, d1 = diff[idx - 1], diff[idx]
    alpha = -d0 / (d1 - d0)
    return 100.0 * float(roc.far[idx - 1] + alpha * (roc.far[idx] - roc.far[idx - 1]))


def tar_at_far(roc: Roc, far: float) -> float:
    """TAR (percent) at the operating point with FAR exactly ``far``.

    Starts from the last ROC point with FAR <= ``far`` (the highest TAR at
    that FAR) and interpolates linearly towards the next point.
    """
    idx = int(np.searchsorted(roc.far, far, side="right")) - 1
    if idx >= roc.far.size - 1 or roc.far[idx] == far:
        return 100.0 * float(roc.tar[idx])
    f0, f1 = roc.far[idx], roc.far[idx + 1]
    t0, t1 = roc.tar[idx], roc.tar[idx + 1]
    return 100.0 * float(t0 + (far - f0) / (f1 - f0) * (t1 - t0))


def verification_report(scores: ScoreSet, fars: tuple[float, float] = (0.01, 0.05)) -> VerificationReport:
    roc = roc_curve(scores)
    return VerificationReport(
        auc=auc_score(scores),
        eer=equal_error_rate(roc),
        tar_at_far1=tar_at_far(roc, fars[0]),
        tar_at_far5=tar_at_far(roc, fars[1]),
        n_genuine=int(scores.genuine.size),
        n_impostor=int(scores.impostor.size),
    )


def score_cohort(gallery, query, threads: int = 1) -> ScoreSet:
    """Cosine scores for every gallery x query pair.

    ``gallery`` and ``query`` are sequences of ``(subject_id, embedding)``.
    Pairs sharing a subject id are genuine, all others impostors.  Scores
    are emitted query by query, so the result does not depend on
    ``threads``.
    """
    gallery, query = list(gallery), list(query)
    if not gallery or not query:
        raise EmptyInput("gallery and query must both be non-empty")
    g_ids = np.array([sid for sid, _ in gallery], dtype=object)
    g = _unit_rows(np.stack([np.asarray(e, dtype=np.float64).ravel() for _, e in gallery]), "gallery")
    q = [np.asarray(e, dtype=np.float64).ravel() for _, e in query]
    q_ids = [sid for sid, _ in query]
    if any(v.shape[0] != g.shape[1] for v in q):
        raise DimMismatch("query and gallery embedding dims differ")
    q = _unit_rows(np.stack(q), "query")

    def rows(sl: slice):
        out = []
        for j in range(sl.start, sl.stop):
            s = g @ q[j]
            match = g_ids == q_ids[j]
            out.append((s[match], s[~match]))
        return out

    n = len(query)
    threads = max(1, int(threads))
    if threads == 1 or n < 2:
        chunks = [rows(slice(0, n))]
    else:
        bounds = np.linspace(0, n, min(threads, n) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(rows, [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]))
    parts = [r for chunk in chunks for r in chunk]
    genuine = np.concatenate([p[0] for p in parts])
    impostor = np.concatenate([p[1] for p in parts])
    if genuine.size == 0:
        raise NoGenuinePairs("no gallery/query pair shares a subject id")
    return ScoreSet(genuine, impostor)


def _shifted_mean(values: Seq[float]) -> float:
    # exact for identical inputs, unlike sum(v) / n
    base = values[0]
    return base + math.fsum(v - base for v in values) / len(values)


def cohort_average(reports: Iterable[VerificationReport]) -> VerificationReport:
    """Unweighted mean of each metric over cohorts; counts are summed."""
    reports = list(reports)
    if not reports:
        raise EmptyInput("cohort_average needs at least one report")
    return VerificationReport(
        auc=_shifted_mean([r.auc for r in reports]),
        eer=_shifted_mean([r.eer for r in reports]),
        tar_at_far1=_shifted_mean([r.tar_at_far1 for r in reports]),
        tar_at_far5=_shifted_mean([r.tar_at_far5 for r in reports]),
        n_genuine=sum(r.n_genuine for r in reports),
        n_impostor=sum(r.n_impostor for r in reports),
    )


# ---------------------------------------------------------------------------
# protocols
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CohortFilter:
    """Frame predicate; ``None`` fields match anything."""

    spectrum: Spectrum | None = None
    pose: Pose | None = None
    location: Location | None = None

    def matches(self, spectrum: Spectrum, pose: Pose, location: Location) -> bool:
        return ((self.spectrum is None or self.spectrum is spectrum)
                and (self.pose is None or self.pose is pose)
                and (self.location is None or self.location is location))

    @property
    def label(self) -> str:
        parts = [v.value.title() for v in (self.location, self.pose) if v is not None]
        return " ".join(parts) if parts else "All"


@dataclass(frozen=True)
class ProtocolSpec:
    """Gallery (real visible) versus query (thermal, synthesised then embedded)."""

    gallery: CohortFilter
    query: CohortFilter
    split: Split = Split.EVAL

    @property
    def name(self) -> tuple[str, str]:
        return self.gallery.label, self.query.label


@dataclass(frozen=True)
class ProtocolItem:
    subject_id: str
    spectrum: Spectrum
    pose: Pose
    location: Location
    frame_id: int
    image_path: str
    embedding_ref: int | None


def _select(manifest: DatasetManifest, flt: CohortFilter, split: Split) -> list[ProtocolItem]:
    items = []
    for s in manifest.subjects:
        if s.split is not split:
            continue
        for q in s.sequences:
            if not flt.matches(q.spectrum, q.pose, q.location):
                continue
            items.extend(
                ProtocolItem(s.subject_id, q.spectrum, q.pose, q.location, f.frame_id,
                             f.image_path, f.embedding_ref)
                for f in q.frames
            )
    return items


def build_protocol(manifest: DatasetManifest, spec: ProtocolSpec) -> tuple[list[ProtocolItem], list[ProtocolItem]]:
    """Deterministic gallery and query selections (manifest order)."""
    gallery = _select(manifest, spec.gallery, spec.split)
    query = _select(manifest, spec.query, spec.split)
    if not gallery:
        raise EmptySelection(f"gallery {spec.gallery.label!r} selects no frames")
    if not query:
        raise EmptySelection(f"query {spec.query.label!r} selects no frames")
    return gallery, query


def pose_location_protocols(
    poses=(Pose.FRONTAL, Pose.PROFILE),
    locations=(Location.INDOOR, Location.OUTDOOR),
) -> list[ProtocolSpec]:
    """Every gallery cohort against every query cohort, split by location and pose.

    Galleries are visible frames and queries thermal frames; within each
    role the cohorts are disjoint.
    """
    cells = [(loc, pose) for loc in locations for pose in poses]
    return [
        ProtocolSpec(CohortFilter(Spectrum.VISIBLE, gp, gl), CohortFilter(Spectrum.THERMAL, qp, ql))
        for gl, gp in cells
        for ql, qp in cells
    ]


@dataclass(frozen=True)
class CohortSelection:
    spec: ProtocolSpec
    gallery: list[ProtocolItem]
    query: list[ProtocolItem]


def build_cohorts(manifest: DatasetManifest, specs: Iterable[ProtocolSpec]) -> tuple[list[CohortSelection], list[ProtocolSpec]]:
    """Apply several protocols; empty ones are returned separately instead of raising."""
    built, empty = [], []
    for spec in specs:
        try:
            g, q = build_protocol(manifest, spec)
        except EmptySelection:
            empty.append(spec)
            continue
        built.append(CohortSelection(spec, g, q))
    return built, empty


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

REPORT_FIELDS = ("gallery", "query", "auc", "eer", "tar1", "tar5")


def report_rows_csv(rows: Iterable[tuple[str, str, VerificationReport]], decimals: int = 4) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for gallery, query, r in rows:
        w.writerow([gallery, query] + [f"{v:.{decimals}f}" for v in
                                       (r.auc, r.eer, r.tar_at_far1, r.tar_at_far5)])
    return buf.getvalue()


def read_report_csv(path) -> list[tuple[str, str, VerificationReport]]:
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:6]] != list(REPORT_FIELDS):
            raise ParseError(f"expected header {','.join(REPORT_FIELDS)}", path, 1)
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) < 6:
                raise ParseError("expected 6 columns", path, lineno)
            try:
                vals = [float(v) for v in rec[2:6]]
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
            if any(not 0.0 <= v <= 100.0 for v in vals):
                raise ParseError("metrics must be percentages in [0, 100]", path, lineno)
            rows.append((rec[0].strip(), rec[1].strip(), VerificationReport(*vals, 0, 0)))
    return rows


def roc_csv(roc: Roc) -> str:
    lines = ["threshold,far,tar"]
    for t, f, r in zip(roc.thresholds, roc.far, roc.tar):
        lines.append(f"{'inf' if np.isinf(t) else repr(float(t))},{float(f)!r},{float(r)!r}")
    return "\n".join(lines) + "\n"


def roc_svg(roc: Roc, size: int = 320, title: str = "") -> str:
    """Minimal SVG with the ROC polyline on a unit square (FAR right, TAR up)."""
    pad = 30
    span = size - 2 * pad
    pts = " ".join(f"{pad + f * span:.2f},{pad + (1.0 - t) * span:.2f}" for f, t in zip(roc.far, roc.tar))
    esc = title.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">\n'
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="#888"/>\n'
        f'<line x1="{pad}" y1="{pad + span}" x2="{pad + span}" y2="{pad}" stroke="#ccc" stroke-dasharray="4"/>\n'
        f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>\n'
        f'<text x="{pad}" y="{pad - 10}" font-size="12">{esc}</text>\n'
        f'<text x="{pad + span / 2:.0f}" y="{size - 8}" font-size="11" text-anchor="middle">FAR</text>\n'
        f'<text x="10" y="{pad + span / 2:.0f}" font-size="11">TAR</text>\n'
        "</svg>\n"
    )
