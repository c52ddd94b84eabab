import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avtok.errors import AlignmentError, FormatError, GrammarError, ValidationError
from avtok.stream import (
    DEFAULT_LAYOUT as L,
    EMOTIONS,
    SpeakerSlot,
    Token,
    TokenStream,
    VocabLayout,
    deinterleave,
    detokenize_text,
    emotion_to_token,
    interleave,
    make_token,
    special,
    tokenize_text,
    validate_stream,
)


def test_layout_offsets():
    assert (L.speech_base, L.face_base, L.emo_base, L.special_base) == (4096, 10657, 11657, 11664)
    assert L.total_vocab == 11668
    assert L.special("B") == 11664 and L.special("D") == 11667


def test_regions_disjoint_and_contiguous():
    kinds = [L.kind_of(i) for i in range(L.total_vocab)]
    for kind in ("text", "speech", "face", "emotion", "special"):
        lo, hi = L.region(kind)
        assert kinds[lo:hi] == [kind] * (hi - lo)
    with pytest.raises(ValidationError):
        L.kind_of(L.total_vocab)


def test_emotion_tokens():
    assert emotion_to_token("Angry") == Token("emotion", L.emo_base)
    assert emotion_to_token("Neutral").id == L.emo_base + 4
    assert [emotion_to_token(e).id - L.emo_base for e in EMOTIONS] == list(range(7))
    with pytest.raises(ValidationError):
        emotion_to_token("Bored")


def test_text_tokens(bpe):
    assert tokenize_text("", bpe) == []
    toks = tokenize_text("i feel great today", bpe)
    assert all(t.kind == "text" and 0 <= t.id < L.text_vocab_size for t in toks)
    assert detokenize_text(toks, bpe) == "i feel great today"


def test_interleave_example():
    out = interleave([1, 2], [30, 40])
    assert out == [make_token("face", 1), make_token("speech", 30), make_token("face", 2), make_token("speech", 40)]
    assert interleave([], []) == []


def test_interleave_mismatch_names_lengths():
    with pytest.raises(AlignmentError, match="1 face vs 2 speech"):
        interleave([1], [2, 3])


def test_deinterleave_errors():
    assert deinterleave([]) == ([], [])
    with pytest.raises(GrammarError):
        deinterleave([make_token("speech", 0), make_token("face", 0)])
    with pytest.raises(GrammarError):
        deinterleave([make_token("face", 0)])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 999), st.integers(0, 6560)), max_size=40))
def test_interleave_round_trip(pairs):
    f, s = [p[0] for p in pairs], [p[1] for p in pairs]
    assert deinterleave(interleave(f, s)) == (f, s)


def _slot():
    v = np.zeros(192)
    v[0] = 1.0
    return SpeakerSlot(v)


def _good():
    return [special("B"), _slot(), Token("text", 5), emotion_to_token("Happy"), special("S"),
            *interleave([3, 4], [7, 8]), special("E"), _slot(), Token("text", 9)]


def test_validate_good_stream():
    assert validate_stream(_good()) == []
    assert validate_stream(_good() + [emotion_to_token("Fear"), special("S"), special("E"), special("D")]) == []


def test_validate_missing_e():
    items = _good()[:-3]
    codes = [d.code for d in validate_stream(items)]
    assert "unclosed span" in codes
    assert validate_stream(items, allow_open=True) == []


def test_validate_region_mismatch():
    items = _good()
    items[5] = Token("face", L.speech_base + 3)
    assert "region mismatch" in [d.code for d in validate_stream(items)]


@pytest.mark.parametrize("mutate,code", [
    (lambda it: it[1:], "missing B prefix"),
    (lambda it: it[:5] + it[6:], "broken alternation"),
    (lambda it: it + [special("D"), Token("text", 1)], "items after D"),
    (lambda it: it[:5] + [special("S")] + it[5:], "nested span"),
    (lambda it: it + [make_token("face", 1)], "face token outside span"),
    (lambda it: it[:4] + it[5:], "E without S"),
])
def test_validate_diagnostics(mutate, code):
    diags = validate_stream(mutate(_good()))
    assert code in [d.code for d in diags]
    assert all(isinstance(d.position, int) for d in diags)


def test_speaker_slot_invariants():
    with pytest.raises(ValidationError):
        SpeakerSlot(np.ones(192))
    with pytest.raises(ValidationError):
        SpeakerSlot(np.ones(10) / np.sqrt(10))


def test_jsonl_round_trip():
    stream = TokenStream(_good())
    text = stream.to_jsonl()
    first = text.splitlines()[:2]
    assert first[0] == '{"t": "tok", "kind": "special", "id": 11664}'
    assert first[1].startswith('{"t": "spk", "v": [')
    assert TokenStream.from_jsonl(text) == stream


def test_jsonl_errors():
    with pytest.raises(FormatError):
        TokenStream.from_jsonl('{"t": "tok", "kind": "bogus", "id": 1}\n')
    with pytest.raises(FormatError):
        TokenStream.from_jsonl("not json\n")


def test_custom_layout():
    small = VocabLayout(text_vocab_size=300)
    assert small.speech_base == 300 and small.total_vocab == 300 + 6561 + 1000 + 7 + 4
