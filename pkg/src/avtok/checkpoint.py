"""Checkpoint container shared by the codec and the toy LM.

Layout: one line of UTF-8 JSON (the header) terminated by ``\\n``, then the
parameters as one contiguous little-endian float32 blob in header order.
The header carries ``format``, ``version``, ``meta``, the ordered parameter
``shapes``, the blob length and its SHA-256.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError, VersionError

CHECKPOINT_VERSION = 1


def save_params(path, kind: str, meta: dict, params: dict[str, np.ndarray]) -> None:
    names = list(params)
    blob = b"".join(np.ascontiguousarray(params[n], dtype="<f4").tobytes() for n in names)
    header = {
        "format": kind,
        "version": CHECKPOINT_VERSION,
        "meta": meta,
        "shapes": [[n, list(params[n].shape)] for n in names],
        "n_bytes": len(blob),
        "checksum": "sha256:" + hashlib.sha256(blob).hexdigest(),
    }
    Path(path).write_bytes(json.dumps(header, sort_keys=True).encode() + b"\n" + blob)


def load_params(path, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    head, sep, blob = raw.partition(b"\n")
    if not sep:
        raise FormatError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(head)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: unreadable checkpoint header") from exc
    if header.get("format") != kind:
        raise FormatError(f"{path}: expected a {kind!r} checkpoint, found {header.get('format')!r}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: checkpoint version {header.get('version')}, "
                           f"this build reads version {CHECKPOINT_VERSION}")
    if len(blob) != header["n_bytes"]:
        raise FormatError(f"{path}: truncated payload ({len(blob)} of {header['n_bytes']} bytes)")
    if "sha256:" + hashlib.sha256(blob).hexdigest() != header["checksum"]:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    params, offset = {}, 0
    for name, shape in header["shapes"]:
        n = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape).astype(np.float32)
        offset += 4 * n
    if offset != len(blob):
        raise FormatError(f"{path}: parameter shapes do not cover the payload")
    return header["meta"], params
