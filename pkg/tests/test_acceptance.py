"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the pytest terminal summary. Run alone with
``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
The two training criteria (C4, C7) take a few minutes each.
"""

import json
import time

import numpy as np
import pytest

from avtok.bpe import bpe_train
from avtok.cli import main
from avtok.codec import CodecModel, grad_check, train_codec
from avtok.dialogue import build_context, synth_dialogue, text_corpus
from avtok.errors import AlignmentError
from avtok.fsq import FsqConfig, code_to_index, index_to_code
from avtok.geometry import SimilarityTransform, apply_transform, fit_similarity
from avtok.landmarks import synth_landmarks, template_face
from avtok.lm import (
    DecodeState,
    LmConfig,
    LmModel,
    lm_forward,
    lm_generate,
    lm_loss,
    lm_train,
    loss_targets,
    speech_accuracy,
)
from avtok.stream import DEFAULT_LAYOUT, Token, deinterleave, interleave, validate_stream

# Pre-build oracle for C4: held-out LMD of the standard codec run
# (train rng 0, holdout rng 9, lr 0.2, 2000 steps, batch 16, seed 0).
CODEC_ORACLE_LMD = 0.0026856
CODEC_LMD_THRESHOLD = 1.25 * CODEC_ORACLE_LMD
# mean template-face baseline on the same held-out split, for context only
TEMPLATE_BASELINE_LMD = 0.0106


def test_c1_fsq_structure(acceptance):
    t0 = time.perf_counter()
    face, speech = FsqConfig((8, 5, 5, 5)), FsqConfig((3,) * 8)
    ids = np.arange(1000)
    codes = index_to_code(ids, face)
    bijective = (np.array_equal(code_to_index(codes, face), ids)
                 and len({tuple(c) for c in codes}) == 1000
                 and all(((codes[:, j] >= 0) & (codes[:, j] < L)).all() for j, L in enumerate(face.levels)))
    dt = time.perf_counter() - t0
    ok = face.implied_vocab == 1000 and speech.implied_vocab == 6561 and bijective and dt < 1.0
    acceptance("C1", "FSQ structural facts", ok,
               f"vocab {face.implied_vocab}/{speech.implied_vocab}, bijective={bijective}, {dt * 1e3:.1f} ms")
    assert ok


def test_c2_token_rate(acceptance):
    model = CodecModel.init(0)
    rng = np.random.default_rng(2)
    bad = [k for k in range(1, 65) if len(model.tokenize_faces(synth_landmarks(rng, 1, k)[0])) != k]
    ok = not bad
    acceptance("C2", "one face token per frame, k=1..64", ok, f"mismatched k: {bad}")
    assert ok


def test_c3_codec_grad_check(acceptance):
    t0 = time.perf_counter()
    probe = synth_landmarks(np.random.default_rng(3), 1, 4)[0]
    errors = []
    for seed in (0, 1, 2):
        model = CodecModel.init(seed)
        errors.append(grad_check(model, probe, eps=1e-5, n_samples=40, seed=seed)["max_rel_error"])
        errors.append(grad_check(model, probe, eps=1e-5, n_samples=20, seed=seed, relaxed=False)["max_rel_error"])
    dt = time.perf_counter() - t0
    worst = max(errors)
    ok = worst <= 1e-3 and dt < 30
    acceptance("C3", "codec gradient check at 3 seeds", ok, f"max rel err {worst:.2e}, {dt:.1f} s")
    assert ok


@pytest.mark.slow
def test_c4_codec_training(acceptance):
    data = synth_landmarks(np.random.default_rng(0), 500, 50)
    hold = synth_landmarks(np.random.default_rng(9), 50, 50)
    t0 = time.perf_counter()
    model, report = train_codec(data, lr=0.2, steps=2000, batch=16, seed=0, holdout=hold)
    dt = time.perf_counter() - t0
    smoothed = report.smoothed()
    ratio = smoothed[-1] / report.initial_mse
    ok = ratio <= 0.25 and dt <= 300 and report.final_lmd < CODEC_LMD_THRESHOLD
    acceptance("C4", "codec training progress", ok,
               f"smoothed/initial {ratio:.3f}, held-out LMD {report.final_lmd:.5f} < {CODEC_LMD_THRESHOLD:.5f} "
               f"(oracle {CODEC_ORACLE_LMD}), {dt:.0f} s")
    assert ok


def test_c5_alignment_round_trip(acceptance):
    rng = np.random.default_rng(5)
    failures = 0
    for _ in range(10_000):
        n = int(rng.integers(0, 65))
        f = rng.integers(0, 1000, n).tolist()
        s = rng.integers(0, 6561, n).tolist()
        failures += deinterleave(interleave(f, s)) != (f, s)
    unraised = 0
    for _ in range(1000):
        n, m = rng.integers(0, 65, 2)
        if n == m:
            m = n + 1
        try:
            interleave(rng.integers(0, 1000, n).tolist(), rng.integers(0, 6561, m).tolist())
            unraised += 1
        except AlignmentError:
            pass
    ok = failures == 0 and unraised == 0
    acceptance("C5", "hard-alignment round trip", ok, f"{failures} round-trip failures, {unraised} unraised mismatches")
    assert ok


def _replay(gen):
    """Re-run the decode state machine over the sampled items; raises on any violation."""
    st = DecodeState()
    items = list(gen.stream)
    start = len(items) - (2 * len(gen.face) + 4)
    sampled = [items[start]] + items[start + 2:-2] + [items[-1]]
    for tok in sampled:
        st.advance(tok)
    return st.phase == "Done"


def test_c6_grammar_soundness(acceptance):
    bpe = bpe_train(text_corpus([synth_dialogue(i, 3) for i in range(20)]), 512)
    contexts = [build_context(synth_dialogue(1000 + i, 1 + i % 3), bpe) for i in range(20)]
    good = 0
    for m in range(5):
        model = LmModel.init(LmConfig(), seed=100 + m)
        for j in range(20):
            gen = lm_generate(model, contexts[j], seed=j, max_pairs=32)
            good += (validate_stream(gen.stream) == [] and gen.emotion.kind == "emotion"
                     and len(gen.face) == len(gen.speech) and _replay(gen))
    ok = good == 100
    acceptance("C6", "decoding grammar, untrained LMs", ok, f"{good}/100 valid")
    assert ok


@pytest.mark.slow
def test_c7_cross_modal_learnability(acceptance):
    t0 = time.perf_counter()
    ctxs = [synth_dialogue(i, 3) for i in range(450)]
    bpe = bpe_train(text_corpus(ctxs[:400]), 4096)
    streams = [build_context(c, bpe, with_target=True) for c in ctxs]
    model = LmModel.init(LmConfig(), seed=0)
    model, _ = lm_train(model, streams[:400], steps=300, batch=8, lr=3e-3)
    acc = speech_accuracy(model, streams[400:])
    dt = time.perf_counter() - t0
    ok = acc >= 0.95 and dt <= 600
    acceptance("C7", "cross-modal learnability", ok, f"held-out speech acc {acc:.4f} (chance {1 / 6561:.1e}), {dt:.0f} s")
    assert ok


def test_c8_uniform_loss(acceptance):
    bpe = bpe_train(text_corpus([synth_dialogue(i, 2) for i in range(5)]), 400)
    streams = [build_context(synth_dialogue(i, 2), bpe, with_target=True) for i in range(5)]
    model = LmModel.init(LmConfig(model_dim=32, n_layers=2, n_heads=2), seed=0).astype(np.float64)
    model.params["head.w"][:] = 0.0
    model.params["head.b"][:] = 0.0
    target = np.log(DEFAULT_LAYOUT.total_vocab)
    worst = 0.0
    for s in streams:
        logits = lm_forward(model, s)
        for pos, tgt in loss_targets(s):
            z = logits[pos]
            ce = np.log(np.exp(z - z.max()).sum()) + z.max() - z[tgt]
            worst = max(worst, abs(ce - target))
    worst = max(worst, abs(lm_loss(model, streams, reduction="mean") - target))
    ok = worst <= 1e-6
    acceptance("C8", "uniform-logit loss = ln(total_vocab)", ok, f"max |ce - ln V| {worst:.1e}")
    assert ok


def test_c9_similarity_fit(acceptance):
    rng = np.random.default_rng(9)
    pts = template_face().reshape(-1, 2).astype(np.float64)
    worst = 0.0
    for _ in range(100):
        t = SimilarityTransform(rng.uniform(0.5, 2), rng.uniform(-np.pi, np.pi), *rng.uniform(-1, 1, 2))
        dst = apply_transform(pts, t)
        fit = fit_similarity(pts, dst)
        worst = max(worst, float(np.abs(apply_transform(pts, fit) - dst).max()))
    ok = worst <= 1e-6
    acceptance("C9", "similarity-fit exactness", ok, f"max point error {worst:.1e}")
    assert ok


def test_c10_end_to_end_determinism(acceptance, tmp_path):
    cfg = {
        "synth": {"n_sequences": 16, "n_frames": 16, "n_holdout": 4, "n_dialogues": 12,
                  "n_holdout_dialogues": 4, "len_range": [4, 8]},
        "codec": {"steps": 50, "batch": 8},
        "layout": {"text_vocab_size": 400},
        "lm": {"model_dim": 32, "n_layers": 1, "n_heads": 2, "max_seq_len": 512, "steps": 10, "batch": 4},
        "generate": {"max_pairs": 16},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    outs = []
    for name in ("a", "b"):
        for cmd in ("synth", "codec-train", "codec-eval", "ctx-build", "lm-train", "lm-generate", "metrics"):
            assert main([cmd, "--config", str(path), "--seed", "7", "--out", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name / "metrics.json").read_bytes())
    ok = outs[0] == outs[1]
    acceptance("C10", "end-to-end determinism", ok, f"metrics.json {len(outs[0])} bytes, identical={ok}")
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
