"""Versioned run configuration and seeded random streams.

One JSON schema is shared by every CLI command. Unknown keys are errors;
missing keys take the defaults below. Every random draw comes from
:func:`named_rng`, which derives an independent generator from the root
seed and a stream name, so adding a stream never shifts the draws of
another.
"""

from __future__ import annotations

import copy
import hashlib
import json
import zlib
from pathlib import Path

import numpy as np

from .errors import ValidationError

CONFIG_VERSION = 1

DEFAULTS = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "synth": {
        "n_sequences": 500,
        "n_frames": 50,
        "n_holdout": 50,
        "n_dialogues": 450,
        "n_holdout_dialogues": 50,
        "n_turns": 3,
        "len_range": [8, 24],
        "speech_noise": 0.0,
    },
    "codec": {"lr": 0.2, "steps": 2000, "batch": 16, "levels": [8, 5, 5, 5]},
    "layout": {"text_vocab_size": 4096},
    "lm": {"model_dim": 128, "n_layers": 4, "n_heads": 4, "max_seq_len": 512,
           "steps": 300, "batch": 8, "lr": 3e-3},
    "sampler": {"top_k": 25, "top_p": 0.8, "repetition_window": 10, "repetition_threshold": 1.0},
    "generate": {"max_pairs": 64},
    "metrics": {"reference": None, "candidate": None},
}


def _merge(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ValidationError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def load_config(path=None, seed=None) -> dict:
    override = {}
    if path is not None:
        try:
            override = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        if not isinstance(override, dict):
            raise ValidationError("config must be a JSON object")
    cfg = _merge(DEFAULTS, override)
    if cfg["version"] != CONFIG_VERSION:
        raise ValidationError(f"config version {cfg['version']}, expected {CONFIG_VERSION}")
    if seed is not None:
        cfg["seed"] = int(seed)
    _check(cfg)
    return cfg


def _check(cfg):
    s = cfg["synth"]
    positive = [("synth.n_sequences", s["n_sequences"]), ("synth.n_frames", s["n_frames"]),
                ("synth.n_holdout", s["n_holdout"]), ("synth.n_dialogues", s["n_dialogues"]),
                ("synth.n_holdout_dialogues", s["n_holdout_dialogues"]), ("synth.n_turns", s["n_turns"]),
                ("codec.lr", cfg["codec"]["lr"]), ("codec.batch", cfg["codec"]["batch"]),
                ("lm.lr", cfg["lm"]["lr"]), ("lm.batch", cfg["lm"]["batch"])]
    for name, value in positive:
        if not isinstance(value, (int, float)) or value <= 0:
            raise ValidationError(f"{name} must be positive, got {value!r}")
    lo, hi = s["len_range"]
    if not 1 <= lo <= hi:
        raise ValidationError(f"synth.len_range must satisfy 1 <= lo <= hi, got {s['len_range']}")
    if not 0 <= s["speech_noise"] <= 1:
        raise ValidationError("synth.speech_noise must lie in [0, 1]")
    if cfg["codec"]["steps"] < 0 or cfg["lm"]["steps"] < 0:
        raise ValidationError("training steps must be non-negative")


def config_checksum(cfg: dict) -> str:
    return "sha256:" + hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def named_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def named_seed(seed: int, name: str) -> int:
    return int(named_rng(seed, name).integers(2 ** 31))
