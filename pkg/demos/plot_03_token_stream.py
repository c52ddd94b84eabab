"""
Serializing a dialogue into one token stream
============================================

Text, speaker slots, emotions and the interleaved face/speech span share a
single vocabulary. The validator pinpoints grammar errors by position.
"""

from avtok.bpe import bpe_train
from avtok.dialogue import build_context, synth_dialogue, text_corpus
from avtok.stream import DEFAULT_LAYOUT, deinterleave, interleave, validate_stream

print("layout", DEFAULT_LAYOUT.to_dict())

ctxs = [synth_dialogue(i, 2, len_range=(3, 5)) for i in range(20)]
bpe = bpe_train(text_corpus(ctxs), 600)
ctx = ctxs[0]
print("history:", [(t.speaker, t.text, t.emotion) for t in ctx.history])

stream = build_context(ctx, bpe, with_target=True)
for item in list(stream)[:40]:
    print("  ", item)
print("valid:", validate_stream(stream) == [])

# hard alignment: faces and speech strictly alternate
pairs = interleave([1, 2, 3], [10, 20, 30])
print(pairs)
print(deinterleave(pairs))

# drop the leading B and look at the diagnostics
for d in validate_stream(list(stream)[1:])[:3]:
    print("diagnostic:", d)
