"""
Training a small landmark codec
===============================

Synthetic 95-point faces are encoded frame by frame into one FSQ token
each, then decoded back. A short run already beats the mean-face
baseline. The full run used by the tests takes about two minutes.
"""

import numpy as np

from avtok.codec import CodecModel, dataset_lmd, train_codec
from avtok.geometry import codebook_utilization, lmd
from avtok.landmarks import synth_landmarks

rng = np.random.default_rng(0)
train = synth_landmarks(rng, 64, 25)
hold = synth_landmarks(np.random.default_rng(9), 8, 25)

# mean face baseline: predict the average training frame everywhere
mean_face = train.reshape(-1, 190).mean(0)
baseline = np.mean([lmd(s, np.broadcast_to(mean_face, s.shape)) for s in hold])

model, report = train_codec(train, lr=0.2, steps=300, batch=16, seed=0, holdout=hold,
                            log=print)
print(f"mse {report.initial_mse:.3f} -> {report.smoothed()[-1]:.3f}")
print(f"held-out LMD {report.final_lmd:.4f} vs mean face {baseline:.4f}")

# one token per frame
tokens = model.tokenize_faces(hold[0])
print(len(tokens), "tokens for", len(hold[0]), "frames:", tokens[:10])
recon = model.decode_tokens(tokens)
print("reconstruction LMD", round(lmd(hold[0], recon), 5))
print("codebook utilization", codebook_utilization(sum((model.tokenize_faces(s) for s in hold), []), 1000))
