"""Similarity-transform face alignment.

Keypoints are ``(K, 2)`` float arrays of ``(x, y)`` pixel coordinates wrapped
in :class:`KeypointSet`, which also records the landmark schema.  Pixel
``(col, row)`` of an image sits at coordinate ``(x, y) = (col, row)``.

The least-squares similarity fit follows Umeyama (1991): centre both point
sets, take the SVD of their cross-covariance, and force a proper rotation
with a sign correction on the last singular direction.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateConfiguration,
    EmptyInput,
    ParseError,
    SchemaMismatch,
    TemplateOutOfBounds,
)

__all__ = [
    "Schema",
    "KeypointSet",
    "SimilarityTransform",
    "CanonicalTemplate",
    "Image",
    "DEFAULT_TEMPLATE",
    "solve_similarity",
    "apply_transform",
    "invert_transform",
    "fit_residual",
    "warp_image",
    "align_face",
    "mean_template",
    "read_template",
    "write_template",
]

_ORTHO_TOL = 1e-9
# smallest/largest singular value ratio below which a fit is rejected
_DEGENERATE_RATIO = 1e-12


class Schema(enum.Enum):
    """Landmark semantics.

    FIVE_POINT: left-eye-centre, right-eye-centre, nose-tip, mouth-left,
    mouth-right.

    SEVEN_POINT_RAW: left-eye-outer, left-eye-inner, right-eye-inner,
    right-eye-outer, nose-tip, mouth-left, mouth-right.  This is the layout a
    keypoint regressor emits before eye centres are estimated.  Denser
    layouts (21/45/55 points) are not modelled.
    """

    FIVE_POINT = 5
    SEVEN_POINT_RAW = 7

    @property
    def size(self) -> int:
        return self.value


@dataclass(frozen=True, eq=False)
class KeypointSet:
    points: np.ndarray
    schema: Schema = Schema.FIVE_POINT

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise SchemaMismatch(f"keypoints must have shape (K, 2), got {pts.shape}")
        if pts.shape[0] != self.schema.size:
            raise SchemaMismatch(
                f"{self.schema.name} expects {self.schema.size} points, got {pts.shape[0]}"
            )
        if not np.all(np.isfinite(pts)):
            raise ValueError("keypoints must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other):
        if not isinstance(other, KeypointSet):
            return NotImplemented
        return self.schema is other.schema and np.array_equal(self.points, other.points)

    __hash__ = None

    def allclose(self, other: "KeypointSet", atol: float = 1e-9) -> bool:
        return self.schema == other.schema and np.allclose(
            self.points, other.points, rtol=0.0, atol=atol
        )

    def with_points(self, points) -> "KeypointSet":
        return KeypointSet(points, self.schema)


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``p -> scale * rotation @ p + translation``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(2, 2)
        trans = np.array(self.translation, dtype=np.float64).reshape(2)
        scale = float(self.scale)
        if not (np.isfinite(scale) and scale > 0):
            raise ValueError(f"scale must be positive, got {scale}")
        if not np.allclose(rot.T @ rot, np.eye(2), rtol=0.0, atol=_ORTHO_TOL):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must have determinant +1")
        if not np.all(np.isfinite(trans)):
            raise ValueError("translation must be finite")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(2), np.zeros(2))

    @classmethod
    def from_angle(cls, scale: float, theta: float, translation=(0.0, 0.0)):
        c, s = np.cos(theta), np.sin(theta)
        return cls(scale, np.array([[c, -s], [s, c]]), translation)

    @property
    def angle(self) -> float:
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    @property
    def matrix(self) -> np.ndarray:
        """2x3 affine matrix ``[sR | t]``."""
        return np.hstack([self.scale * self.rotation, self.translation[:, None]])

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation


@dataclass(frozen=True, eq=False)
class CanonicalTemplate:
    points: KeypointSet
    output_size: tuple[int, int]  # (width, height)

    def __post_init__(self):
        w, h = (int(v) for v in self.output_size)
        if w <= 0 or h <= 0:
            raise ValueError(f"output size must be positive, got {self.output_size}")
        if self.points.schema is not Schema.FIVE_POINT:
            raise SchemaMismatch("template must use the FIVE_POINT schema")
        p = self.points.points
        inside = (p[:, 0] >= 0) & (p[:, 0] < w) & (p[:, 1] >= 0) & (p[:, 1] < h)
        if not inside.all():
            raise TemplateOutOfBounds(
                f"template points {np.flatnonzero(~inside).tolist()} fall outside {w}x{h}"
            )
        object.__setattr__(self, "output_size", (w, h))

    @property
    def diagonal(self) -> float:
        w, h = self.output_size
        return float(np.hypot(w, h))


DEFAULT_TEMPLATE = CanonicalTemplate(
    KeypointSet(
        [[44.0, 52.0], [84.0, 52.0], [64.0, 72.0], [48.0, 92.0], [80.0, 92.0]],
        Schema.FIVE_POINT,
    ),
    (128, 128),
)


@dataclass(frozen=True, eq=False)
class Image:
    """Row-major intensities in ``[0, 1]``; shape ``(H, W)`` or ``(H, W, C)``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise ValueError(f"image must be HxW or HxWx3, got {arr.shape}")
        if arr.size == 0:
            raise ValueError("image must be non-empty")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


def _as_points(kp) -> np.ndarray:
    return kp.points if isinstance(kp, KeypointSet) else np.asarray(kp, dtype=np.float64)


def solve_similarity(src: KeypointSet, dst: KeypointSet) -> SimilarityTransform:
    """Least-squares similarity transform taking ``src`` onto ``dst``.

    Minimises ``sum_i ||dst_i - (s R src_i + t)||^2`` over scale ``s > 0``,
    proper rotations ``R`` and translations ``t``.  Reflections are never
    returned; for a mirrored ``dst`` the best proper rotation is used and the
    residual stays positive.

    Raises
    ------
    SchemaMismatch
        If the two sets use different schemas.
    DegenerateConfiguration
        If the source points coincide, or the cross-covariance vanishes so
        that no positive scale exists.
    """
    if isinstance(src, KeypointSet) and isinstance(dst, KeypointSet):
        if src.schema is not dst.schema:
            raise SchemaMismatch(f"{src.schema.name} vs {dst.schema.name}")
    a = _as_points(src)
    b = _as_points(dst)
    if a.shape != b.shape:
        raise SchemaMismatch(f"point counts differ: {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n < 2:
        raise DegenerateConfiguration("need at least two points")

    mu_a = a.mean(axis=0)
    mu_b = b.mean(axis=0)
    ac = a - mu_a
    bc = b - mu_b
    var_a = np.sum(ac * ac) / n

    # Coincident sources: total spread negligible against coordinate magnitude.
    ref = max(1.0, float(np.max(np.abs(a))) ** 2)
    if var_a <= _DEGENERATE_RATIO * ref:
        raise DegenerateConfiguration("source points are coincident")

    cov = bc.T @ ac / n
    u, d, vt = np.linalg.svd(cov)
    if d[0] <= _DEGENERATE_RATIO * max(var_a, float(np.sum(bc * bc) / n)):
        raise DegenerateConfiguration("cross-covariance has rank 0")
    sign = np.ones(2)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[1] = -1.0
    rot = u @ np.diag(sign) @ vt
    scale = float(np.dot(d, sign) / var_a)
    if scale <= 0.0:
        raise DegenerateConfiguration("no positive scale fits this configuration")
    trans = mu_b - scale * rot @ mu_a
    return SimilarityTransform(scale, rot, trans)


def apply_transform(t: SimilarityTransform, kp: KeypointSet) -> KeypointSet:
    return kp.with_points(t(kp.points))


def invert_transform(t: SimilarityTransform) -> SimilarityTransform:
    rot_inv = t.rotation.T
    scale_inv = 1.0 / t.scale
    return SimilarityTransform(scale_inv, rot_inv, -scale_inv * rot_inv @ t.translation)


def fit_residual(t: SimilarityTransform, src: KeypointSet, dst: KeypointSet) -> float:
    """Sum of squared distances between ``t(src)`` and ``dst``."""
    diff = t(_as_points(src)) - _as_points(dst)
    return float(np.sum(diff * diff))


def _bilinear(data: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = data.shape[:2]
    valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xc = np.where(valid, x, 0.0)
    yc = np.where(valid, y, 0.0)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    if data.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
        valid_b = valid[..., None]
    else:
        valid_b = valid
    top = data[y0, x0] * (1.0 - fx) + data[y0, x1] * fx
    bottom = data[y1, x0] * (1.0 - fx) + data[y1, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    return np.where(valid_b, out, 0.0)


def warp_image(img: Image, out_to_src: SimilarityTransform, output_size) -> Image:
    """Inverse-map every output pixel through ``out_to_src`` and sample bilinearly.

    Samples falling outside the source pixel grid are filled with 0.
    """
    w, h = (int(v) for v in output_size)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1)
    src = out_to_src(grid)
    sampled = _bilinear(img.data, src[:, 0].reshape(h, w), src[:, 1].reshape(h, w))
    return Image(np.clip(sampled, 0.0, 1.0))


def align_face(
    img: Image, kp: KeypointSet, tmpl: CanonicalTemplate = DEFAULT_TEMPLATE
) -> tuple[Image, SimilarityTransform]:
    """Warp ``img`` so that ``kp`` lands on the template landmarks.

    Returns the aligned image (``tmpl.output_size``) and the forward
    keypoint-to-template transform.
    """
    if kp.schema is not Schema.FIVE_POINT:
        raise SchemaMismatch("alignment needs FIVE_POINT keypoints")
    fwd = solve_similarity(kp, tmpl.points)
    return warp_image(img, invert_transform(fwd), tmpl.output_size), fwd


def mean_template(samples, output_size) -> CanonicalTemplate:
    samples = list(samples)
    if not samples:
        raise EmptyInput("mean_template needs at least one sample")
    for s in samples:
        if s.schema is not Schema.FIVE_POINT:
            raise SchemaMismatch("template samples must be FIVE_POINT")
    mean = np.mean(np.stack([s.points for s in samples]), axis=0)
    return CanonicalTemplate(KeypointSet(mean, Schema.FIVE_POINT), tuple(output_size))


def read_template(path) -> CanonicalTemplate:
    """Parse a template file: ``size W H`` then one ``x y`` line per landmark."""
    path = Path(path)
    size = None
    pts = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields or fields[0].startswith("#"):
                continue
            try:
                if fields[0] == "size":
                    if size is not None or len(fields) != 3:
                        raise ValueError("expected a single 'size W H' header")
                    size = (int(fields[1]), int(fields[2]))
                elif len(fields) == 2:
                    if size is None:
                        raise ValueError("'size W H' header must come first")
                    pts.append((float(fields[0]), float(fields[1])))
                else:
                    raise ValueError(f"expected 'x y', got {line.strip()!r}")
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
    if size is None:
        raise ParseError("missing 'size W H' header", path)
    try:
        return CanonicalTemplate(KeypointSet(pts, Schema.FIVE_POINT), size)
    except SchemaMismatch as exc:
        raise ParseError(str(exc), path) from None


def write_template(tmpl: CanonicalTemplate, path) -> None:
    w, h = tmpl.output_size
    lines = [f"size {w} {h}"]
    lines += [f"{x!r} {y!r}" for x, y in tmpl.points.points.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")
