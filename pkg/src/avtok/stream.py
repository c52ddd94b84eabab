"""Unified token space and the serialized dialogue stream.

All modalities share one id space of contiguous regions::

    [0, text)  text BPE | speech (6561) | face (1000) | emotion (7) | B S E D

A stream is ``B``, then for every history turn
``speaker-slot, text..., emotion, S, face, speech, ..., face, speech, E``,
then the current turn's ``speaker-slot, text...``. A complete training
example continues with the target turn's
``emotion, S, (face, speech)*, E`` and ends with ``D``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np

from .errors import AlignmentError, FormatError, GrammarError, ValidationError

EMOTIONS = ("Angry", "Disgust", "Fear", "Happy", "Neutral", "Sadness", "Surprise")
SPECIALS = ("B", "S", "E", "D")
SPK_DIM = 192
KINDS = ("text", "speech", "face", "emotion", "special")
STREAM_FORMAT_VERSION = 1


@dataclass(frozen=True)
class VocabLayout:
    text_vocab_size: int = 4096
    speech_vocab_size: int = 6561
    face_vocab_size: int = 1000
    emotion_count: int = len(EMOTIONS)

    @property
    def speech_base(self) -> int:
        return self.text_vocab_size

    @property
    def face_base(self) -> int:
        return self.speech_base + self.speech_vocab_size

    @property
    def emo_base(self) -> int:
        return self.face_base + self.face_vocab_size

    @property
    def special_base(self) -> int:
        return self.emo_base + self.emotion_count

    @property
    def total_vocab(self) -> int:
        return self.special_base + len(SPECIALS)

    def region(self, kind: str) -> tuple[int, int]:
        return {
            "text": (0, self.text_vocab_size),
            "speech": (self.speech_base, self.face_base),
            "face": (self.face_base, self.emo_base),
            "emotion": (self.emo_base, self.special_base),
            "special": (self.special_base, self.total_vocab),
        }[kind]

    def kind_of(self, uid: int) -> str:
        for kind in KINDS:
            lo, hi = self.region(kind)
            if lo <= uid < hi:
                return kind
        raise ValidationError(f"token id {uid} outside the unified vocabulary [0, {self.total_vocab})")

    def special(self, name: str) -> int:
        return self.special_base + SPECIALS.index(name)

    def to_dict(self) -> dict:
        return {"text_vocab_size": self.text_vocab_size, "speech_vocab_size": self.speech_vocab_size,
                "face_vocab_size": self.face_vocab_size, "emotion_count": self.emotion_count}


DEFAULT_LAYOUT = VocabLayout()


@dataclass(frozen=True)
class Token:
    kind: str
    id: int

    def __repr__(self):
        return f"{self.kind}:{self.id}"


@dataclass(frozen=True, eq=False)
class SpeakerSlot:
    embedding: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.embedding, dtype=np.float64)
        if v.shape != (SPK_DIM,):
            raise ValidationError(f"speaker embedding must have {SPK_DIM} values, got {v.shape}")
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValidationError(f"speaker embedding must be unit norm, got {np.linalg.norm(v):.8f}")
        object.__setattr__(self, "embedding", v)

    def __eq__(self, other):
        return isinstance(other, SpeakerSlot) and np.array_equal(self.embedding, other.embedding)

    def __repr__(self):
        return "spk"


Item = Union[Token, SpeakerSlot]


def make_token(kind: str, local_id: int, layout: VocabLayout = DEFAULT_LAYOUT) -> Token:
    lo, hi = layout.region(kind)
    if not 0 <= local_id < hi - lo:
        raise ValidationError(f"{kind} id {local_id} outside [0, {hi - lo})")
    return Token(kind, lo + int(local_id))


def special(name: str, layout: VocabLayout = DEFAULT_LAYOUT) -> Token:
    return Token("special", layout.special(name))


def local_id(tok: Token, layout: VocabLayout = DEFAULT_LAYOUT) -> int:
    return tok.id - layout.region(tok.kind)[0]


def emotion_to_token(label: str, layout: VocabLayout = DEFAULT_LAYOUT) -> Token:
    if label not in EMOTIONS:
        raise ValidationError(f"unknown emotion {label!r}; expected one of {', '.join(EMOTIONS)}")
    return Token("emotion", layout.emo_base + EMOTIONS.index(label))


def token_to_emotion(tok: Token, layout: VocabLayout = DEFAULT_LAYOUT) -> str:
    if tok.kind != "emotion":
        raise ValidationError(f"{tok!r} is not an emotion token")
    return EMOTIONS[tok.id - layout.emo_base]


def tokenize_text(text: str, bpe, layout: VocabLayout = DEFAULT_LAYOUT) -> list[Token]:
    ids = bpe.encode(text)
    if any(i >= layout.text_vocab_size for i in ids):
        raise ValidationError(f"BPE model exceeds the text region of {layout.text_vocab_size} ids")
    return [Token("text", i) for i in ids]


def detokenize_text(tokens, bpe) -> str:
    return bpe.decode([t.id for t in tokens])


# hard alignment --------------------------------------------------------------

def interleave(face, speech, layout: VocabLayout = DEFAULT_LAYOUT) -> list[Token]:
    """``[f1, s1, f2, s2, ...]`` from equal-length local face and speech ids."""
    face, speech = list(face), list(speech)
    if len(face) != len(speech):
        raise AlignmentError(f"hard alignment needs equal lengths: {len(face)} face vs {len(speech)} speech tokens")
    out = []
    for f, s in zip(face, speech):
        out.append(make_token("face", f, layout))
        out.append(make_token("speech", s, layout))
    return out


def deinterleave(items, layout: VocabLayout = DEFAULT_LAYOUT) -> tuple[list[int], list[int]]:
    items = list(items)
    if len(items) % 2:
        raise GrammarError("interleaved span has odd length", len(items) - 1)
    face, speech = [], []
    for pos, item in enumerate(items):
        want = "face" if pos % 2 == 0 else "speech"
        if not isinstance(item, Token) or item.kind != want:
            raise GrammarError(f"expected a {want} token, found {item!r}", pos)
        (face if want == "face" else speech).append(local_id(item, layout))
    return face, speech


# streams -----------------------------------------------------------------------

@dataclass
class TokenStream:
    items: list = field(default_factory=list)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def __eq__(self, other):
        return isinstance(other, TokenStream) and len(self.items) == len(other.items) and all(
            a == b for a, b in zip(self.items, other.items))

    def to_jsonl(self) -> str:
        lines = []
        for item in self.items:
            if isinstance(item, SpeakerSlot):
                lines.append(json.dumps({"t": "spk", "v": [float(x) for x in item.embedding]}))
            else:
                lines.append(json.dumps({"t": "tok", "kind": item.kind, "id": item.id}))
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str, layout: VocabLayout = DEFAULT_LAYOUT) -> "TokenStream":
        items = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if obj["t"] == "spk":
                    items.append(SpeakerSlot(np.asarray(obj["v"], dtype=np.float64)))
                elif obj["t"] == "tok":
                    tok = Token(str(obj["kind"]), int(obj["id"]))
                    if tok.kind not in KINDS:
                        raise ValidationError(f"unknown token kind {tok.kind!r}")
                    items.append(tok)
                else:
                    raise ValidationError(f"unknown item type {obj['t']!r}")
            except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as exc:
                raise FormatError(f"stream line {lineno}: {exc}") from None
        return cls(items)


class Diagnostic(NamedTuple):
    position: int
    code: str
    detail: str = ""

    def __str__(self):
        return f"position {self.position}: {self.code}" + (f" ({self.detail})" if self.detail else "")


def validate_stream(stream, layout: VocabLayout = DEFAULT_LAYOUT, allow_open=False) -> list[Diagnostic]:
    """Every grammar violation in ``stream``; an empty list means well formed.

    ``allow_open`` accepts a prefix whose last span is still open, as seen
    while decoding.
    """
    items = list(stream)
    diags: list[Diagnostic] = []
    B, S, E, D = (layout.special(n) for n in SPECIALS)
    if not items or not isinstance(items[0], Token) or items[0].id != B:
        diags.append(Diagnostic(0, "missing B prefix"))
    span_start, expect = None, "face"
    for pos, item in enumerate(items):
        if isinstance(item, SpeakerSlot):
            if span_start is not None:
                diags.append(Diagnostic(pos, "speaker slot inside span"))
            continue
        if not isinstance(item, Token) or item.kind not in KINDS:
            diags.append(Diagnostic(pos, "unknown item", repr(item)))
            continue
        try:
            actual = layout.kind_of(item.id)
        except ValidationError:
            diags.append(Diagnostic(pos, "id outside vocabulary", str(item.id)))
            continue
        if actual != item.kind:
            diags.append(Diagnostic(pos, "region mismatch", f"{item.kind} token with {actual} id {item.id}"))
        kind = actual
        if kind == "special":
            if item.id == B and pos != 0:
                diags.append(Diagnostic(pos, "B after start"))
            elif item.id == S:
                if span_start is not None:
                    diags.append(Diagnostic(pos, "nested span", f"span opened at {span_start}"))
                span_start, expect = pos, "face"
            elif item.id == E:
                if span_start is None:
                    diags.append(Diagnostic(pos, "E without S"))
                elif expect == "speech":
                    diags.append(Diagnostic(pos, "unpaired face token before E"))
                span_start = None
            elif item.id == D:
                if span_start is not None:
                    diags.append(Diagnostic(pos, "unclosed span", f"span opened at {span_start}"))
                    span_start = None
                if pos != len(items) - 1:
                    diags.append(Diagnostic(pos, "items after D"))
        elif kind in ("face", "speech"):
            if span_start is None:
                diags.append(Diagnostic(pos, f"{kind} token outside span"))
            elif kind != expect:
                diags.append(Diagnostic(pos, "broken alternation", f"expected {expect}, found {kind}"))
            else:
                expect = "speech" if kind == "face" else "face"
        elif span_start is not None:
            diags.append(Diagnostic(pos, f"{kind} token inside span"))
    if span_start is not None and not allow_open:
        diags.append(Diagnostic(span_start, "unclosed span"))
    return diags


def is_valid(stream, layout: VocabLayout = DEFAULT_LAYOUT, **kw) -> bool:
    return not validate_stream(stream, layout, **kw)
