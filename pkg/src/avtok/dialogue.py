"""Dialogue contexts, their synthetic generator and stream serialization."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, FormatError, ValidationError
from .stream import (
    DEFAULT_LAYOUT,
    EMOTIONS,
    SPK_DIM,
    SpeakerSlot,
    TokenStream,
    VocabLayout,
    emotion_to_token,
    interleave,
    special,
    tokenize_text,
)

DIALOGUE_VERSION = 1
SPEECH_MULTIPLIER = 2917  # coprime with 6561 = 3**8, so the face->speech map is injective
SPEECH_OFFSET = 113

WORDS = (
    "i you we they it this that what why how when where really maybe never always so very just "
    "think know feel want need love hate like miss hope wish believe remember forget tell said "
    "today tomorrow yesterday now again here there home work friend family movie music food "
    "great good bad sad happy angry scared sorry fine okay wonderful terrible strange funny "
    "is are was were will would could should can do did not no yes oh wow well sure right"
).split()


def speaker_vector(name: str) -> np.ndarray:
    """Unit-norm stand-in voiceprint, fixed per speaker name."""
    seed = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")
    v = np.random.default_rng(seed).standard_normal(SPK_DIM)
    return v / np.linalg.norm(v)


def face_to_speech(face_ids, speech_vocab=6561) -> np.ndarray:
    """The fixed cross-modal map behind synthetic speech tokens."""
    return (np.asarray(face_ids, dtype=np.int64) * SPEECH_MULTIPLIER + SPEECH_OFFSET) % speech_vocab


@dataclass
class Turn:
    speaker: str
    text: str
    emotion: str | None = None
    face_tokens: list[int] | None = None
    speech_tokens: list[int] | None = None
    embedding: np.ndarray | None = None

    def __post_init__(self):
        if self.embedding is None:
            self.embedding = speaker_vector(self.speaker)
        self.embedding = np.asarray(self.embedding, dtype=np.float64)

    @property
    def has_target(self) -> bool:
        return self.emotion is not None and self.face_tokens is not None and self.speech_tokens is not None

    def check(self, complete=True):
        if complete and not self.has_target:
            raise ValidationError(f"turn by {self.speaker!r} lacks emotion or face/speech tokens")
        if self.emotion is not None and self.emotion not in EMOTIONS:
            raise ValidationError(f"unknown emotion {self.emotion!r}")
        if self.face_tokens is not None or self.speech_tokens is not None:
            nf, ns = len(self.face_tokens or []), len(self.speech_tokens or [])
            if nf != ns:
                raise AlignmentError(f"turn by {self.speaker!r}: {nf} face vs {ns} speech tokens")
        SpeakerSlot(self.embedding)

    def to_dict(self) -> dict:
        d = {"speaker": self.speaker, "text": self.text, "speaker_embedding": [float(x) for x in self.embedding]}
        if self.emotion is not None:
            d["emotion"] = self.emotion
        if self.face_tokens is not None:
            d["face_tokens"] = [int(x) for x in self.face_tokens]
        if self.speech_tokens is not None:
            d["speech_tokens"] = [int(x) for x in self.speech_tokens]
        return d

    @classmethod
    def from_dict(cls, d) -> "Turn":
        allowed = {"speaker", "text", "speaker_embedding", "emotion", "face_tokens", "speech_tokens"}
        extra = set(d) - allowed
        if extra:
            raise FormatError(f"unknown turn fields {sorted(extra)}")
        return cls(d["speaker"], d["text"], d.get("emotion"), d.get("face_tokens"), d.get("speech_tokens"),
                   d.get("speaker_embedding"))


@dataclass
class DialogueContext:
    history: list[Turn] = field(default_factory=list)
    current: Turn = None

    def check(self):
        for t in self.history:
            t.check(complete=True)
        if self.current is None:
            raise ValidationError("dialogue has no current turn")
        self.current.check(complete=False)

    def to_json(self) -> str:
        return json.dumps({"version": DIALOGUE_VERSION, "history": [t.to_dict() for t in self.history],
                           "current": self.current.to_dict()})

    @classmethod
    def from_json(cls, text: str) -> "DialogueContext":
        try:
            obj = json.loads(text)
            if obj.get("version") != DIALOGUE_VERSION:
                raise FormatError(f"dialogue version {obj.get('version')}, expected {DIALOGUE_VERSION}")
            ctx = cls([Turn.from_dict(t) for t in obj["history"]], Turn.from_dict(obj["current"]))
        except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
            raise FormatError(f"malformed dialogue JSON: {exc}") from None
        ctx.check()
        return ctx


def _turn_items(turn: Turn, bpe, layout, with_av: bool) -> list:
    items = [SpeakerSlot(turn.embedding), *tokenize_text(turn.text, bpe, layout)]
    if with_av:
        items.append(emotion_to_token(turn.emotion, layout))
        items.append(special("S", layout))
        items.extend(interleave(turn.face_tokens, turn.speech_tokens, layout))
        items.append(special("E", layout))
    return items


def build_context(ctx: DialogueContext, bpe, layout: VocabLayout = DEFAULT_LAYOUT, with_target=False) -> TokenStream:
    """Serialize ``ctx``; ``with_target`` appends the current turn's answer and ``D``."""
    ctx.check()
    items = [special("B", layout)]
    for turn in ctx.history:
        items.extend(_turn_items(turn, bpe, layout, with_av=True))
    items.extend(_turn_items(ctx.current, bpe, layout, with_av=False))
    if with_target:
        cur = ctx.current
        cur.check(complete=True)
        items.append(emotion_to_token(cur.emotion, layout))
        items.append(special("S", layout))
        items.extend(interleave(cur.face_tokens, cur.speech_tokens, layout))
        items.append(special("E", layout))
        items.append(special("D", layout))
    return TokenStream(items)


def _sentence(rng, n_min=3, n_max=8) -> str:
    n = int(rng.integers(n_min, n_max + 1))
    return " ".join(WORDS[i] for i in rng.integers(len(WORDS), size=n))


def _face_chain(rng, k, vocab=1000, stay=0.7, max_step=2) -> list[int]:
    out = [int(rng.integers(vocab))]
    for _ in range(k - 1):
        if rng.random() < stay:
            out.append(int((out[-1] + rng.integers(-max_step, max_step + 1)) % vocab))
        else:
            out.append(int(rng.integers(vocab)))
    return out


def synth_turn(rng, speaker: str, len_range=(8, 24), speech_noise=0.0, layout=DEFAULT_LAYOUT) -> Turn:
    k = int(rng.integers(len_range[0], len_range[1] + 1))
    face = _face_chain(rng, k, layout.face_vocab_size)
    speech = face_to_speech(face, layout.speech_vocab_size)
    noisy = rng.random(k) < speech_noise
    speech[noisy] = rng.integers(layout.speech_vocab_size, size=int(noisy.sum()))
    return Turn(speaker, _sentence(rng), EMOTIONS[int(rng.integers(len(EMOTIONS)))], face,
                [int(s) for s in speech])


def synth_dialogue(seed: int, n_turns: int, len_range=(8, 24), speech_noise=0.0, n_speakers=2,
                   layout: VocabLayout = DEFAULT_LAYOUT) -> DialogueContext:
    """Seeded synthetic dialogue: ``n_turns`` history turns plus a current turn.

    Face tokens follow a sticky random walk over the face vocabulary. Speech
    tokens are :func:`face_to_speech` of the paired face token, replaced by a
    uniform draw with probability ``speech_noise``. The current turn carries
    its target emotion and tokens so the context can serve as a training
    example; :func:`build_context` emits them only when asked.
    """
    if n_turns < 1:
        raise ValidationError("a synthetic dialogue needs at least one history turn")
    rng = np.random.default_rng([int(seed), 0x5d1a])
    speakers = [f"speaker-{seed}-{i}" for i in range(n_speakers)]
    turns = [synth_turn(rng, speakers[i % n_speakers], len_range, speech_noise, layout) for i in range(n_turns + 1)]
    return DialogueContext(turns[:-1], turns[-1])


def text_corpus(contexts) -> list[str]:
    return [t.text for c in contexts for t in [*c.history, c.current]]
