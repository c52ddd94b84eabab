"""
A toy dialogue LM that learns the face-to-speech map
====================================================

The synthetic speech tokens are a fixed function of the paired face token,
so a small decoder can learn them from context alone. Generation runs under
a type mask that makes grammar violations impossible.
"""

from avtok.bpe import bpe_train
from avtok.dialogue import build_context, synth_dialogue, text_corpus
from avtok.lm import LmConfig, LmModel, SamplerConfig, lm_generate, lm_train, speech_accuracy
from avtok.stream import validate_stream

ctxs = [synth_dialogue(i, 2, len_range=(6, 12)) for i in range(120)]
bpe = bpe_train(text_corpus(ctxs[:100]), 1024)
streams = [build_context(c, bpe, with_target=True) for c in ctxs]

config = LmConfig(model_dim=64, n_layers=2, n_heads=4, max_seq_len=256)
model = LmModel.init(config, seed=0)
print("untrained accuracy", speech_accuracy(model, streams[100:]))

model, report = lm_train(model, streams[:100], steps=250, batch=8, lr=3e-3, warmup=20, log=print)
print("held-out speech accuracy", speech_accuracy(model, streams[100:]))

# sample the target turn of a held-out context
prompt = build_context(ctxs[110], bpe)
gen = lm_generate(model, prompt, SamplerConfig(), seed=0, max_pairs=24)
print(gen.summary(), "valid:", validate_stream(gen.stream) == [])
print("face  ", gen.face[:12])
print("speech", gen.speech[:12])
