"""Synthesis training objectives and a small identity classifier.

The identity term combines a cosine distance between synthetic and real
face features with a label-smoothed cross-entropy over identity logits::

    q_y = 1 - (N - 1) / N * eps,   q_i = eps / N  (i != y)
    L_C = 1 - cos(f_syn, f_real) - sum_i q_i log softmax(z)_i

The full objective is ``lambda1 * L_G + lambda2 * L_1 + lambda3 * L_C``,
where the adversarial term ``L_G`` comes from whatever synthesis backbone is
in use and enters here as a plain number.

Every differentiable function has an analytic gradient next to it so the
pair can be audited with central differences (:func:`gradient_audit`).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (
    DegenerateClassCount,
    DimMismatch,
    EmptyBatch,
    InvalidEpsilon,
    InvalidLabel,
    LengthMismatch,
    MagicMismatch,
    ShapeMismatch,
    TruncatedFile,
    ZeroVector,
)
from .geometry import Image

__all__ = [
    "SmoothedTargets",
    "LossWeights",
    "MlpClassifier",
    "smoothed_targets",
    "log_softmax",
    "softmax",
    "cross_entropy",
    "cross_entropy_grad",
    "entropy",
    "cosine_identity_loss",
    "cosine_identity_grad",
    "identity_loss",
    "l1_pixel_loss",
    "l1_pixel_grad",
    "composite_loss",
    "mlp_forward",
    "mlp_loss_and_grads",
    "mlp_train_step",
    "save_classifier",
    "load_classifier",
    "central_difference",
    "relative_error",
    "gradient_audit",
]


@dataclass(frozen=True, eq=False)
class SmoothedTargets:
    q: np.ndarray
    label: int
    epsilon: float


def smoothed_targets(y: int, n: int, epsilon: float) -> SmoothedTargets:
    if n < 2:
        raise DegenerateClassCount(f"need at least 2 classes, got {n}")
    if not 0.0 <= epsilon < 1.0:
        raise InvalidEpsilon(f"epsilon must lie in [0, 1), got {epsilon}")
    if not 0 <= y < n:
        raise InvalidLabel(f"label {y} outside [0, {n})")
    q = np.full(n, epsilon / n)
    q[y] = 1.0 - (n - 1) / n * epsilon
    q.setflags(write=False)
    return SmoothedTargets(q, int(y), float(epsilon))


def _target_vector(targets, n: int) -> np.ndarray:
    q = targets.q if isinstance(targets, SmoothedTargets) else np.asarray(targets, dtype=np.float64)
    if q.shape[-1] != n:
        raise LengthMismatch(f"{n} logits vs {q.shape[-1]} targets")
    return q


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = np.max(z, axis=-1, keepdims=True)
    return z - m - np.log(np.sum(np.exp(z - m), axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(logits, targets) -> float:
    """``-sum_i q_i log softmax(logits)_i`` with log-sum-exp stabilisation."""
    z = np.asarray(logits, dtype=np.float64)
    q = _target_vector(targets, z.shape[-1])
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    return float(-np.sum(q * log_softmax(z)))


def cross_entropy_grad(logits, targets) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    q = _target_vector(targets, z.shape[-1])
    return softmax(z) * np.sum(q) - q


def entropy(q) -> float:
    q = np.asarray(q, dtype=np.float64)
    nz = q > 0
    return float(-np.sum(q[nz] * np.log(q[nz])))


def _pair_vectors(a, b) -> tuple[np.ndarray, np.ndarray, float, float]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimMismatch(f"embedding dims differ: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine is undefined for a zero vector")
    return a, b, na, nb


def cosine_identity_loss(f_syn, f_real) -> float:
    """``1 - cos(f_syn, f_real)``; both inputs are normalised internally."""
    a, b, na, nb = _pair_vectors(f_syn, f_real)
    cos = np.dot(a / na, b / nb)
    return float(1.0 - np.clip(cos, -1.0, 1.0))


def cosine_identity_grad(f_syn, f_real) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`cosine_identity_loss` w.r.t. both embeddings."""
    a, b, na, nb = _pair_vectors(f_syn, f_real)
    cos = np.dot(a, b) / (na * nb)
    ga = -(b / (na * nb) - cos * a / na**2)
    gb = -(a / (na * nb) - cos * b / nb**2)
    return ga, gb


def identity_loss(f_syn, f_real, logits, y: int, n: int, epsilon: float) -> float:
    return cosine_identity_loss(f_syn, f_real) + cross_entropy(logits, smoothed_targets(y, n, epsilon))


def _pixels(x) -> np.ndarray:
    return x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)


def l1_pixel_loss(a, b) -> float:
    """Mean absolute difference over all pixels and channels."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ShapeMismatch(f"{pa.shape} vs {pb.shape}")
    return float(np.mean(np.abs(pa - pb)))


def l1_pixel_grad(a, b) -> np.ndarray:
    """Gradient w.r.t. ``a``; the subgradient at ties is 0."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ShapeMismatch(f"{pa.shape} vs {pb.shape}")
    return np.sign(pa - pb) / pa.size


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 10.0
    lambda3: float = 1.0

    def __post_init__(self):
        w = (self.lambda1, self.lambda2, self.lambda3)
        if any(not np.isfinite(v) or v < 0 for v in w):
            raise ValueError(f"loss weights must be finite and non-negative, got {w}")
        if all(v == 0 for v in w):
            raise ValueError("at least one loss weight must be positive")


def composite_loss(lg: float, l1: float, lc: float, w: LossWeights = LossWeights()) -> float:
    return w.lambda1 * lg + w.lambda2 * l1 + w.lambda3 * lc


# ---------------------------------------------------------------------------
# identity classifier: D -> H -> H -> N, ReLU hidden layers, raw logits out.
# Weights are stored (in, out) so a batch forward pass is x @ W + b.
# ---------------------------------------------------------------------------

_PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass(frozen=True, eq=False)
class MlpClassifier:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        arrs = {k: np.array(getattr(self, k), dtype=np.float64) for k in _PARAM_NAMES}
        d, h = arrs["w1"].shape
        n = arrs["w3"].shape[1]
        expected = {"w1": (d, h), "b1": (h,), "w2": (h, h), "b2": (h,), "w3": (h, n), "b3": (n,)}
        for k, shape in expected.items():
            if arrs[k].shape != shape:
                raise DimMismatch(f"{k} has shape {arrs[k].shape}, expected {shape}")
            if not np.all(np.isfinite(arrs[k])):
                raise ValueError(f"{k} has non-finite entries")
            object.__setattr__(self, k, arrs[k])

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.w1.shape[0], self.w1.shape[1], self.w3.shape[1]

    @classmethod
    def init(cls, d: int, n: int, hidden: int = 64, seed: int = 0) -> "MlpClassifier":
        rng = np.random.default_rng(seed)

        def he(fan_in, fan_out):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))

        return cls(he(d, hidden), np.zeros(hidden), he(hidden, hidden), np.zeros(hidden),
                   he(hidden, n), np.zeros(n))

    @classmethod
    def zeros(cls, d: int, n: int, hidden: int = 64) -> "MlpClassifier":
        return cls(np.zeros((d, hidden)), np.zeros(hidden), np.zeros((hidden, hidden)),
                   np.zeros(hidden), np.zeros((hidden, n)), np.zeros(n))

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in _PARAM_NAMES}

    def replace(self, **params) -> "MlpClassifier":
        return MlpClassifier(**{**self.params(), **params})


def _forward_cache(m: MlpClassifier, x: np.ndarray):
    a1 = x @ m.w1 + m.b1
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ m.w2 + m.b2
    h2 = np.maximum(a2, 0.0)
    return a1, h1, a2, h2, h2 @ m.w3 + m.b3


def _as_batch(m: MlpClassifier, e) -> np.ndarray:
    x = np.asarray(e, dtype=np.float64)
    if x.shape[-1] != m.dims[0]:
        raise DimMismatch(f"classifier expects dim {m.dims[0]}, got {x.shape[-1]}")
    return x


def mlp_forward(m: MlpClassifier, e) -> np.ndarray:
    """Logits for one embedding ``(D,)`` or a batch ``(B, D)``."""
    return _forward_cache(m, _as_batch(m, e))[-1]


def mlp_loss_and_grads(m: MlpClassifier, x, labels, epsilon: float) -> tuple[float, dict[str, np.ndarray]]:
    """Mean label-smoothed cross-entropy over a batch and its parameter gradients."""
    x = np.atleast_2d(_as_batch(m, x))
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if x.shape[0] == 0:
        raise EmptyBatch("batch is empty")
    if labels.shape[0] != x.shape[0]:
        raise LengthMismatch(f"{x.shape[0]} embeddings vs {labels.shape[0]} labels")
    n = m.dims[2]
    q = np.stack([smoothed_targets(int(y), n, epsilon).q for y in labels])
    a1, h1, a2, h2, z = _forward_cache(m, x)
    bsz = x.shape[0]
    loss = float(-np.sum(q * log_softmax(z)) / bsz)

    dz = (softmax(z) * q.sum(axis=1, keepdims=True) - q) / bsz
    grads = {"w3": h2.T @ dz, "b3": dz.sum(axis=0)}
    da2 = (dz @ m.w3.T) * (a2 > 0)
    grads["w2"] = h1.T @ da2
    grads["b2"] = da2.sum(axis=0)
    da1 = (da2 @ m.w2.T) * (a1 > 0)
    grads["w1"] = x.T @ da1
    grads["b1"] = da1.sum(axis=0)
    return loss, grads


def mlp_train_step(m: MlpClassifier, batch, epsilon: float, lr: float) -> tuple[MlpClassifier, float]:
    """One plain gradient-descent step on ``[(embedding, label), ...]``.

    Returns the updated classifier and the loss measured before the update.
    """
    batch = list(batch)
    if not batch:
        raise EmptyBatch("batch is empty")
    x = np.stack([np.asarray(e, dtype=np.float64) for e, _ in batch])
    labels = [y for _, y in batch]
    loss, grads = mlp_loss_and_grads(m, x, labels, epsilon)
    updated = {k: v - lr * grads[k] for k, v in m.params().items()}
    return MlpClassifier(**updated), loss


_MLP_MAGIC = b"MLP1"


def save_classifier(m: MlpClassifier, path) -> None:
    """Binary checkpoint: ``MLP1``, u32 D, H, N, then little-endian float64
    weights and biases of each layer in row-major order."""
    d, h, n = m.dims
    with open(path, "wb") as fh:
        fh.write(_MLP_MAGIC)
        fh.write(struct.pack("<3I", d, h, n))
        for k in _PARAM_NAMES:
            fh.write(np.ascontiguousarray(getattr(m, k), dtype="<f8").tobytes())


def load_classifier(path) -> MlpClassifier:
    raw = Path(path).read_bytes()
    if raw[:4] != _MLP_MAGIC:
        raise MagicMismatch(f"{path}: not an MLP1 checkpoint")
    if len(raw) < 16:
        raise TruncatedFile(f"{path}: header truncated")
    d, h, n = struct.unpack("<3I", raw[4:16])
    shapes = [(d, h), (h,), (h, h), (h,), (h, n), (n,)]
    need = 16 + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes, found {len(raw)}")
    params, off = {}, 16
    for k, shape in zip(_PARAM_NAMES, shapes):
        count = int(np.prod(shape))
        params[k] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
    return MlpClassifier(**params)


# ---------------------------------------------------------------------------
# gradient auditing
# ---------------------------------------------------------------------------

def central_difference(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(analytic, numeric) -> float:
    """``max|a - n| / max(max|a|, max|n|)``, with a 1e-12 floor on the scale."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))), 1e-12)
    return float(np.max(np.abs(a - n)) / scale)


def gradient_audit(seed: int, n_points: int = 20, h: float = 1e-5, epsilon: float = 0.1) -> dict[str, float]:
    """Worst relative error between analytic and central-difference gradients.

    Checks cross-entropy (w.r.t. logits), the cosine term (w.r.t. both
    embeddings), the l1 pixel loss (w.r.t. the synthetic image, sampled away
    from ties) and every classifier parameter, each at ``n_points`` random
    points.
    """
    rng = np.random.default_rng(seed)
    worst = {"cross_entropy": 0.0, "cosine": 0.0, "l1": 0.0, "mlp": 0.0}
    for _ in range(n_points):
        n = int(rng.integers(2, 12))
        z = rng.normal(0.0, 2.0, size=n)
        t = smoothed_targets(int(rng.integers(0, n)), n, epsilon)
        num = central_difference(lambda v: cross_entropy(v, t), z, h)
        worst["cross_entropy"] = max(worst["cross_entropy"], relative_error(cross_entropy_grad(z, t), num))

        d = int(rng.integers(3, 33))
        a, b = rng.normal(size=d), rng.normal(size=d)
        ga, gb = cosine_identity_grad(a, b)
        na = central_difference(lambda v: cosine_identity_loss(v, b), a, h)
        nb = central_difference(lambda v: cosine_identity_loss(a, v), b, h)
        worst["cosine"] = max(worst["cosine"], relative_error(ga, na), relative_error(gb, nb))

        pa = rng.uniform(0.0, 1.0, size=(8, 8))
        gap = rng.uniform(10 * h, 0.5, size=pa.shape) * rng.choice([-1.0, 1.0], size=pa.shape)
        pb = pa + gap
        num = central_difference(lambda v: l1_pixel_loss(v, pb), pa, h)
        worst["l1"] = max(worst["l1"], relative_error(l1_pixel_grad(pa, pb), num))

        dim, hid, cls = 6, 5, 4
        m = MlpClassifier.init(dim, cls, hidden=hid, seed=int(rng.integers(2**31)))
        m = m.replace(b1=rng.normal(0, 0.1, hid), b2=rng.normal(0, 0.1, hid), b3=rng.normal(0, 0.1, cls))
        x = rng.normal(size=(3, dim))
        labels = rng.integers(0, cls, size=3)
        _, grads = mlp_loss_and_grads(m, x, labels, epsilon)
        for k, v in m.params().items():
            def f(p, k=k):
                return mlp_loss_and_grads(m.replace(**{k: p}), x, labels, epsilon)[0]
            worst["mlp"] = max(worst["mlp"], relative_error(grads[k], central_difference(f, v, h)))
    return worst
