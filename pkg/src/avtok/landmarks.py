"""Landmark sequences: the synthetic face generator and the ``.lmk`` / JSONL formats.

A frame holds 190 values, read as 95 ``(x, y)`` points in normalized image
coordinates. ``.lmk`` files are a 16-byte little-endian header (magic
``LMK1``, u32 version, u32 frame count, u32 frame width) followed by
``k * 190`` little-endian float32 values.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, NumericError, ValidationError, VersionError

FRAME_DIM = 190
N_POINTS = FRAME_DIM // 2
FRAME_RATE = 25
LMK_MAGIC = b"LMK1"
LMK_VERSION = 1
MAX_AMPLITUDE = 0.05


def check_sequence(frames) -> np.ndarray:
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[1] != FRAME_DIM:
        raise ValidationError(f"landmark sequence must be (k, {FRAME_DIM}), got {frames.shape}")
    if frames.shape[0] < 1:
        raise ValidationError("landmark sequence needs at least one frame")
    if not np.all(np.isfinite(frames)):
        raise NumericError("landmark sequence contains non-finite values")
    return frames


def as_points(frames) -> np.ndarray:
    """View ``(k, 190)`` frames as ``(k, 95, 2)`` points."""
    frames = np.asarray(frames)
    return frames.reshape(frames.shape[0], -1, 2)


def template_face() -> np.ndarray:
    """A fixed 95-point frontal face: jaw, brows, eyes, nose and lips."""
    pts = []
    t = np.linspace(-0.9 * np.pi, -0.1 * np.pi, 27)
    pts.append(np.c_[0.5 + 0.28 * np.cos(t), 0.48 - 0.34 * np.sin(t)])  # jaw, 27
    for cx in (0.38, 0.62):
        u = np.linspace(-1, 1, 7)
        pts.append(np.c_[cx + 0.08 * u, 0.33 - 0.025 * (1 - u ** 2)])  # brows, 14
    for cx in (0.39, 0.61):
        a = np.linspace(0, 2 * np.pi, 10, endpoint=False)
        pts.append(np.c_[cx + 0.05 * np.cos(a), 0.41 + 0.018 * np.sin(a)])  # eyes, 20
    v = np.linspace(0, 1, 6)
    pts.append(np.c_[np.full(6, 0.5), 0.42 + 0.14 * v])  # nose bridge, 6
    pts.append(np.c_[0.5 + 0.05 * np.linspace(-1, 1, 5), np.full(5, 0.58)])  # nostrils, 5
    a = np.linspace(0, 2 * np.pi, 14, endpoint=False)
    pts.append(np.c_[0.5 + 0.11 * np.cos(a), 0.7 + 0.04 * np.sin(a)])  # outer lip, 14
    a = np.linspace(0, 2 * np.pi, 9, endpoint=False)
    pts.append(np.c_[0.5 + 0.06 * np.cos(a), 0.7 + 0.015 * np.sin(a)])  # inner lip, 9
    face = np.concatenate(pts)
    assert face.shape == (N_POINTS, 2)
    return face


def motion_basis(n_modes=6, seed=0) -> np.ndarray:
    """Smooth displacement fields shared by all synthetic faces.

    Returns ``(n_modes, 95, 2)`` fields with unit max-abs displacement. The
    first modes are rigid head shifts and a jaw opening; the rest are smooth
    random fields over the template.
    """
    face = template_face()
    rng = np.random.default_rng(seed)
    modes = [np.tile([1.0, 0.0], (N_POINTS, 1)), np.tile([0.0, 1.0], (N_POINTS, 1))]
    jaw = np.zeros((N_POINTS, 2))
    jaw[:, 1] = np.clip(face[:, 1] - 0.5, 0, None)
    modes.append(jaw)
    while len(modes) < n_modes:
        centers = rng.uniform(0.25, 0.75, size=(3, 2))
        dirs = rng.normal(size=(3, 2))
        d2 = ((face[:, None, :] - centers[None]) ** 2).sum(-1)
        modes.append(np.exp(-d2 / 0.02) @ dirs)
    modes = np.stack(modes[:n_modes])
    return modes / np.abs(modes).max(axis=(1, 2), keepdims=True)


def synth_landmarks(rng: np.random.Generator, n_sequences: int, k: int, n_modes=6) -> np.ndarray:
    """Template face displaced by sums of low-frequency sinusoids.

    Each sequence drives every shared mode with its own frequency in
    ``[0.2, 2]`` Hz and phase. Mode amplitudes are scaled so that no point
    moves by more than ``MAX_AMPLITUDE``. Returns ``(n, k, 190)`` float32.
    """
    face = template_face().reshape(-1)
    basis = motion_basis(n_modes).reshape(n_modes, -1)
    t = np.arange(k) / FRAME_RATE
    freq = rng.uniform(0.2, 2.0, size=(n_sequences, n_modes))
    phase = rng.uniform(0, 2 * np.pi, size=(n_sequences, n_modes))
    weight = rng.dirichlet(np.ones(n_modes), size=n_sequences) * MAX_AMPLITUDE  # sum <= amplitude
    coeff = weight[:, None, :] * np.sin(2 * np.pi * freq[:, None, :] * t[None, :, None] + phase[:, None, :])
    out = face + coeff @ basis
    return out.astype(np.float32)


# file formats --------------------------------------------------------------

def write_lmk(path, frames) -> None:
    frames = check_sequence(frames).astype("<f4")
    header = LMK_MAGIC + struct.pack("<III", LMK_VERSION, frames.shape[0], FRAME_DIM)
    Path(path).write_bytes(header + frames.tobytes())


def read_lmk(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != LMK_MAGIC:
        raise FormatError(f"{path}: not an LMK1 landmark file")
    version, k, dim = struct.unpack("<III", raw[4:16])
    if version != LMK_VERSION:
        raise VersionError(f"{path}: unsupported .lmk version {version}")
    if dim != FRAME_DIM:
        raise FormatError(f"{path}: frame width {dim}, expected {FRAME_DIM}")
    if len(raw) != 16 + 4 * k * dim:
        raise FormatError(f"{path}: payload holds {len(raw) - 16} bytes, header promises {4 * k * dim}")
    frames = np.frombuffer(raw, dtype="<f4", offset=16).reshape(k, dim).astype(np.float32)
    return check_sequence(frames)


def write_lmk_jsonl(path, frames) -> None:
    frames = check_sequence(frames)
    with open(path, "w") as fh:
        for row in frames:
            fh.write(json.dumps([float(v) for v in row]) + "\n")


def read_lmk_jsonl(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            if not isinstance(row, list) or len(row) != FRAME_DIM:
                raise FormatError(f"{path}:{lineno}: expected an array of {FRAME_DIM} numbers")
            rows.append(row)
    return check_sequence(np.asarray(rows, dtype=np.float32))


def read_landmarks(path) -> np.ndarray:
    path = Path(path)
    return read_lmk_jsonl(path) if path.suffix == ".jsonl" else read_lmk(path)
