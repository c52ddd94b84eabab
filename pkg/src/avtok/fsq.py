"""Finite scalar quantization.

Each latent dimension ``d`` is squashed into ``[-h_d, h_d]`` with
``h_d = (L_d - 1) / 2`` and rounded onto the ``L_d`` grid points
``-h_d, -h_d + 1, ..., h_d``. For odd ``L_d`` the grid is the integers; for
even ``L_d`` it sits on half-integers, which keeps it symmetric about zero.

Codes are the grid position ``c_d = round(bound + h_d)`` in ``[0, L_d)``.
Ties round half away from zero. Dequantized values are the grid points
rescaled by ``1 / h_d`` into ``[-1, 1]``.

Token ids are little-endian mixed radix: dimension 0 is least significant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ValidationError

__all__ = [
    "FsqConfig",
    "FACE_LEVELS",
    "SPEECH_LEVELS",
    "round_half_away",
    "fsq_bound",
    "fsq_bound_grad",
    "fsq_quantize",
    "fsq_dequantize",
    "fsq_preimage",
    "fsq_forward_ste",
    "code_to_index",
    "index_to_code",
]

FACE_LEVELS = (8, 5, 5, 5)
# Recorded only to account for the 6561-entry speech vocabulary.
SPEECH_LEVELS = (3,) * 8


@dataclass(frozen=True)
class FsqConfig:
    levels: tuple[int, ...] = FACE_LEVELS

    def __post_init__(self):
        levels = tuple(int(l) for l in self.levels)
        if len(levels) < 1:
            raise ValidationError("FSQ needs at least one dimension")
        if any(l < 2 for l in levels):
            raise ValidationError(f"every FSQ level count must be >= 2, got {list(levels)}")
        object.__setattr__(self, "levels", levels)

    @property
    def dim(self) -> int:
        return len(self.levels)

    @property
    def implied_vocab(self) -> int:
        return math.prod(self.levels)

    @property
    def half_width(self) -> np.ndarray:
        return (np.asarray(self.levels, dtype=np.float64) - 1.0) / 2.0

    @property
    def radix(self) -> np.ndarray:
        """Place value of each dimension in the mixed-radix index."""
        return np.concatenate([[1], np.cumprod(self.levels[:-1])]).astype(np.int64)

    def to_json(self) -> str:
        return json.dumps({"levels": list(self.levels)})

    @classmethod
    def from_json(cls, text: str) -> "FsqConfig":
        obj = json.loads(text)
        if set(obj) != {"levels"}:
            raise ValidationError(f"FsqConfig JSON must hold exactly 'levels', got {sorted(obj)}")
        return cls(tuple(obj["levels"]))


def round_half_away(x):
    """Round to nearest integer, ties away from zero (numpy rounds ties to even)."""
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _check(z, cfg: FsqConfig) -> np.ndarray:
    z = np.asarray(z)
    if not np.issubdtype(z.dtype, np.floating):
        z = z.astype(np.float64)
    if z.shape[-1:] != (cfg.dim,):
        raise ValidationError(f"expected trailing dimension {cfg.dim}, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite value passed to FSQ")
    return z


def fsq_bound(z, cfg: FsqConfig) -> np.ndarray:
    """Squash ``z`` (shape ``(..., D)``) into ``[-h_d, h_d]`` with a scaled tanh."""
    z = _check(z, cfg)
    return np.tanh(z) * cfg.half_width.astype(z.dtype)


def fsq_bound_grad(z, cfg: FsqConfig) -> np.ndarray:
    """Elementwise derivative of :func:`fsq_bound`."""
    z = _check(z, cfg)
    return (1.0 - np.tanh(z) ** 2) * cfg.half_width.astype(z.dtype)


def fsq_quantize(z, cfg: FsqConfig) -> np.ndarray:
    """Integer codes in ``[0, L_d)`` for latents ``z`` of shape ``(..., D)``."""
    h = cfg.half_width
    codes = round_half_away(fsq_bound(z, cfg).astype(np.float64) + h)
    # tanh saturates to exactly +-1 in floating point, so the clip is only a guard
    return np.clip(codes, 0, np.asarray(cfg.levels) - 1).astype(np.int64)


def _check_codes(code, cfg: FsqConfig) -> np.ndarray:
    code = np.asarray(code)
    if code.shape[-1:] != (cfg.dim,):
        raise ValidationError(f"expected code vectors of length {cfg.dim}, got shape {code.shape}")
    if not np.issubdtype(code.dtype, np.integer):
        if not np.all(code == np.round(code)):
            raise ValidationError("codes must be integers")
        code = code.astype(np.int64)
    if np.any(code < 0) or np.any(code >= np.asarray(cfg.levels)):
        raise ValidationError(f"code out of range for levels {list(cfg.levels)}")
    return code


def fsq_dequantize(code, cfg: FsqConfig) -> np.ndarray:
    """Map integer codes to grid values normalized into ``[-1, 1]``."""
    code = _check_codes(code, cfg)
    h = cfg.half_width
    return (code - h) / h


def fsq_preimage(code, cfg: FsqConfig) -> np.ndarray:
    """A finite latent that quantizes to ``code``.

    Interior codes use the exact inverse squash of their grid point. The two
    end grid points are only reached in the limit, so they are pulled a
    quarter step inward first.
    """
    code = _check_codes(code, cfg)
    h = cfg.half_width
    target = np.clip(code - h, -h + 0.25, h - 0.25)
    return np.arctanh(target / h)


def fsq_forward_ste(z, cfg: FsqConfig) -> tuple[np.ndarray, np.ndarray]:
    """Straight-through forward pass.

    Returns the dequantized value and the elementwise derivative used in the
    backward pass. Rounding is treated as the identity, so the derivative is
    that of ``fsq_bound(z) / h``, namely ``1 - tanh(z)**2``.
    """
    z = _check(z, cfg)
    values = fsq_dequantize(fsq_quantize(z, cfg), cfg).astype(z.dtype)
    grad = 1.0 - np.tanh(z) ** 2
    return values, grad


def code_to_index(code, cfg: FsqConfig):
    """Mixed-radix token id(s) for code vector(s) of shape ``(..., D)``."""
    code = _check_codes(code, cfg)
    ids = code @ cfg.radix
    return int(ids) if ids.ndim == 0 else ids


def index_to_code(index, cfg: FsqConfig) -> np.ndarray:
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValidationError("token ids must be integers")
    if np.any(idx < 0) or np.any(idx >= cfg.implied_vocab):
        raise ValidationError(f"token id out of range [0, {cfg.implied_vocab})")
    levels = np.asarray(cfg.levels, dtype=np.int64)
    return (idx[..., None] // cfg.radix) % levels
