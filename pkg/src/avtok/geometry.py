"""Landmark geometry and evaluation metrics.

Includes the landmark distance (LMD), least-squares similarity and affine
fits used to rescale predicted landmarks onto a reference portrait, and
codebook utilization.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError


def _points(seq) -> np.ndarray:
    """Accept ``(k, 190)`` frames, ``(k, n, 2)`` or ``(n, 2)`` points; return ``(k, n, 2)``."""
    a = np.asarray(seq, dtype=np.float64)
    if a.ndim == 2 and a.shape[1] == 2:
        return a[None]
    if a.ndim == 2 and a.shape[1] % 2 == 0:
        return a.reshape(a.shape[0], -1, 2)
    if a.ndim == 3 and a.shape[2] == 2:
        return a
    raise ValidationError(f"cannot read landmarks of shape {a.shape}")


def lmd(a, b) -> float:
    """Mean Euclidean distance between corresponding points over all frames."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValidationError(f"LMD needs identical shapes, got {a.shape} and {b.shape}")
    pa, pb = _points(a), _points(b)
    return float(np.linalg.norm(pa - pb, axis=-1).mean())


@dataclass(frozen=True)
class SimilarityTransform:
    s: float = 1.0
    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not self.s > 0:
            raise ValidationError(f"similarity scale must be positive, got {self.s}")

    @property
    def matrix(self) -> np.ndarray:
        c, s = np.cos(self.theta), np.sin(self.theta)
        return self.s * np.array([[c, -s], [s, c]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    def inverse(self) -> "SimilarityTransform":
        s_inv = 1.0 / self.s
        c, s = np.cos(-self.theta), np.sin(-self.theta)
        t = -s_inv * np.array([[c, -s], [s, c]]) @ self.translation
        return SimilarityTransform(s_inv, -self.theta, float(t[0]), float(t[1]))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "SimilarityTransform":
        return cls(**{k: float(d[k]) for k in ("s", "theta", "tx", "ty")})


@dataclass(frozen=True)
class AffineTransform:
    a: np.ndarray  # (2, 2)
    t: np.ndarray  # (2,)

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.a)

    @property
    def translation(self) -> np.ndarray:
        return np.asarray(self.t)


def fit_similarity(src, dst) -> SimilarityTransform:
    """Least-squares scale, rotation and translation mapping ``src`` onto ``dst``.

    Closed form (Umeyama) from the centered cross-covariance; reflections
    are excluded.
    """
    src, dst = np.asarray(src, dtype=np.float64), np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValidationError(f"need matching (n, 2) point sets, got {src.shape} and {dst.shape}")
    if src.shape[0] < 2:
        raise ValidationError("similarity fit needs at least two points")
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = (xs ** 2).sum() / len(src)
    if var_s <= 1e-24:
        raise ValidationError("source points are coincident; similarity fit is singular")
    cov = xd.T @ xs / len(src)
    u, sig, vt = np.linalg.svd(cov)
    d = np.ones(2)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[-1] = -1.0
    rot = u @ np.diag(d) @ vt
    scale = float((sig * d).sum() / var_s)
    t = mu_d - scale * rot @ mu_s
    return SimilarityTransform(scale, float(np.arctan2(rot[1, 0], rot[0, 0])), float(t[0]), float(t[1]))


def fit_affine(src, dst) -> AffineTransform:
    """Full six-parameter least-squares affine fit; needs three non-collinear points."""
    src, dst = np.asarray(src, dtype=np.float64), np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValidationError(f"need matching (n, 2) point sets, got {src.shape} and {dst.shape}")
    design = np.c_[src, np.ones(len(src))]
    if len(src) < 3 or np.linalg.matrix_rank(design) < 3:
        raise ValidationError("affine fit needs at least three non-collinear points")
    sol, *_ = np.linalg.lstsq(design, dst, rcond=None)
    return AffineTransform(sol[:2].T, sol[2])


def apply_transform(seq, t):
    """Map every point ``p`` to ``A p + t``; the input layout is preserved."""
    arr = np.asarray(seq)
    if isinstance(t, SimilarityTransform) and t == SimilarityTransform():
        return arr.copy()
    pts = _points(arr)
    out = pts @ t.matrix.T + t.translation
    return out.reshape(arr.shape).astype(arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float64)


def fit_residual(src, dst, t) -> float:
    """Root-mean-square point error of ``t(src)`` against ``dst``."""
    diff = apply_transform(np.asarray(src, dtype=np.float64), t) - np.asarray(dst, dtype=np.float64)
    return float(np.sqrt((diff.reshape(-1, 2) ** 2).sum(-1).mean()))


def codebook_utilization(tokens, vocab: int) -> float:
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab):
        raise ValidationError(f"token id outside [0, {vocab})")
    return len(np.unique(tokens)) / vocab


def metric_record(metric: str, value: float, n_frames: int, n_points: int) -> dict:
    return {"metric": metric, "value": float(value), "n_frames": int(n_frames), "n_points": int(n_points)}


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True)
