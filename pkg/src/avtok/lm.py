"""Toy decoder-only language model and its constrained decoding contract.

Given a serialized context, the model emits the target emotion first and
then strictly alternating face and speech tokens, terminated by ``D``. The
decoder inserts the structural ``S`` after the emotion and ``E`` before
``D`` itself; those two are never sampled and carry no loss.

Training uses teacher forcing: the logits at position ``t`` are scored
against item ``t + 1``. Targets are emotion, face, speech and ``D`` items;
text and speaker slots are context only.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import load_params, save_params
from .errors import GrammarError, NumericError, ValidationError
from .stream import (
    DEFAULT_LAYOUT,
    SPK_DIM,
    SpeakerSlot,
    Token,
    TokenStream,
    VocabLayout,
    local_id,
    special,
    token_to_emotion,
    validate_stream,
)

CHECKPOINT_KIND = "avtok-lm"
NEG = -1e9


@dataclass(frozen=True)
class SamplerConfig:
    top_k: int = 25
    top_p: float = 0.8
    repetition_window: int = 10
    repetition_threshold: float = 1.0

    def __post_init__(self):
        if self.top_k < 1:
            raise ValidationError("top_k must be >= 1")
        if not 0 < self.top_p <= 1:
            raise ValidationError("top_p must lie in (0, 1]")
        if self.repetition_window < 1 or not 0 < self.repetition_threshold <= 1:
            raise ValidationError("repetition window must be >= 1 and threshold in (0, 1]")


@dataclass(frozen=True)
class LmConfig:
    model_dim: int = 128
    n_layers: int = 4
    n_heads: int = 4
    max_seq_len: int = 512
    layout: VocabLayout = DEFAULT_LAYOUT
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.model_dim % self.n_heads:
            raise ValidationError(f"model_dim {self.model_dim} is not divisible by n_heads {self.n_heads}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layout"] = self.layout.to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "LmConfig":
        d = dict(d)
        layout = VocabLayout(**d.pop("layout", {}))
        sampler = SamplerConfig(**d.pop("sampler", {}))
        return cls(layout=layout, sampler=sampler, **d)


def param_shapes(cfg: LmConfig) -> dict[str, tuple]:
    d, v = cfg.model_dim, cfg.layout.total_vocab
    shapes = {"tok_emb": (v, d), "pos_emb": (cfg.max_seq_len, d), "spk.w": (SPK_DIM, d), "spk.b": (d,)}
    for i in range(cfg.n_layers):
        shapes.update({
            f"l{i}.ln1.g": (d,), f"l{i}.ln1.b": (d,),
            f"l{i}.q.w": (d, d), f"l{i}.k.w": (d, d), f"l{i}.v.w": (d, d),
            f"l{i}.o.w": (d, d), f"l{i}.o.b": (d,),
            f"l{i}.ln2.g": (d,), f"l{i}.ln2.b": (d,),
            f"l{i}.fc.w": (d, 4 * d), f"l{i}.fc.b": (4 * d,),
            f"l{i}.proj.w": (4 * d, d), f"l{i}.proj.b": (d,),
        })
    shapes.update({"ln_f.g": (d,), "ln_f.b": (d,), "head.w": (d, v), "head.b": (v,)})
    return shapes


@dataclass
class LmModel:
    params: dict[str, np.ndarray]
    config: LmConfig = field(default_factory=LmConfig)

    @classmethod
    def init(cls, config: LmConfig | None = None, seed=0) -> "LmModel":
        config = config or LmConfig()
        rng = np.random.default_rng([int(seed), 7])
        resid_std = 0.02 / np.sqrt(2 * config.n_layers)
        params = {}
        for name, shape in param_shapes(config).items():
            if name.endswith(".g"):
                params[name] = np.ones(shape, np.float32)
            elif name.endswith(".b"):
                params[name] = np.zeros(shape, np.float32)
            else:
                std = resid_std if name.endswith(("o.w", "proj.w")) else 0.02
                if name == "spk.w":
                    std = 1.0 / np.sqrt(SPK_DIM)
                params[name] = (rng.standard_normal(shape) * std).astype(np.float32)
        return cls(params, config)

    def astype(self, dtype) -> "LmModel":
        return LmModel({k: v.astype(dtype) for k, v in self.params.items()}, self.config)

    @property
    def dtype(self):
        return self.params["tok_emb"].dtype

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


# batching ---------------------------------------------------------------------

def _encode_items(items, layout: VocabLayout):
    ids = np.zeros(len(items), np.int64)
    slots = np.zeros((len(items), SPK_DIM))
    is_slot = np.zeros(len(items), bool)
    for i, item in enumerate(items):
        if isinstance(item, SpeakerSlot):
            slots[i], is_slot[i] = item.embedding, True
        else:
            ids[i] = item.id
    return ids, slots, is_slot


def _pack(streams, cfg: LmConfig, dtype):
    lens = [len(s) for s in streams]
    if max(lens) > cfg.max_seq_len:
        raise ValidationError(f"stream of length {max(lens)} exceeds max_seq_len {cfg.max_seq_len}")
    t = max(lens)
    ids = np.zeros((len(streams), t), np.int64)
    slots = np.zeros((len(streams), t, SPK_DIM), dtype)
    is_slot = np.zeros((len(streams), t), bool)
    for b, s in enumerate(streams):
        i, v, m = _encode_items(list(s), cfg.layout)
        ids[b, :len(i)], slots[b, :len(i)], is_slot[b, :len(i)] = i, v, m
    return ids, slots, is_slot


def _hidden(p, cfg: LmConfig, ids, slots, is_slot):
    """Final-layer hidden states ``(batch, time, model_dim)`` on the autodiff tape."""
    b, t = ids.shape
    dt = p["tok_emb"].data.dtype
    m = is_slot[..., None].astype(dt)
    x = ad.embedding(p["tok_emb"], ids) * (1.0 - m) + (ad.Tensor(slots) @ p["spk.w"] + p["spk.b"]) * m
    x = x + p["pos_emb"][:t]
    nh, dh = cfg.n_heads, cfg.model_dim // cfg.n_heads
    causal = np.triu(np.full((t, t), NEG, dtype=dt), 1)
    for i in range(cfg.n_layers):
        h = ad.layer_norm(x, p[f"l{i}.ln1.g"], p[f"l{i}.ln1.b"])

        def heads(w):
            return (h @ p[w]).reshape(b, t, nh, dh).transpose(0, 2, 1, 3)

        q, k, v = heads(f"l{i}.q.w"), heads(f"l{i}.k.w"), heads(f"l{i}.v.w")
        att = ad.softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh)) + causal)
        y = (att @ v).transpose(0, 2, 1, 3).reshape(b, t, cfg.model_dim)
        x = x + (y @ p[f"l{i}.o.w"] + p[f"l{i}.o.b"])
        h = ad.layer_norm(x, p[f"l{i}.ln2.g"], p[f"l{i}.ln2.b"])
        x = x + (ad.silu(h @ p[f"l{i}.fc.w"] + p[f"l{i}.fc.b"]) @ p[f"l{i}.proj.w"] + p[f"l{i}.proj.b"])
    return ad.layer_norm(x, p["ln_f.g"], p["ln_f.b"])


def _wrap(params, grad=True):
    return {k: ad.Tensor(v, requires_grad=grad) for k, v in params.items()}


def lm_forward(model: LmModel, stream) -> np.ndarray:
    """Causal logits, shape ``(len(stream), total_vocab)``."""
    items = list(stream)
    if not items:
        raise ValidationError("empty stream")
    diags = validate_stream(items, model.config.layout, allow_open=True)
    if diags:
        raise GrammarError(f"malformed stream: {diags[0]}", diags[0].position)
    ids, slots, is_slot = _pack([items], model.config, model.dtype)
    p = _wrap(model.params, grad=False)
    h = _hidden(p, model.config, ids, slots, is_slot)
    return (h @ p["head.w"] + p["head.b"]).data[0]


# loss ---------------------------------------------------------------------------

TARGET_KINDS = ("emotion", "face", "speech")


def loss_targets(stream, layout: VocabLayout = DEFAULT_LAYOUT, history=True) -> list[tuple[int, int]]:
    """``(position, target id)`` pairs of a complete training stream.

    The item at ``position`` is the last input before the target. ``D`` is
    predicted from the item preceding the structural ``E``. With
    ``history=False`` only the final (target) turn contributes.
    """
    items = list(stream)
    diags = validate_stream(items, layout)
    if diags:
        raise GrammarError(f"malformed training stream: {diags[0]}", diags[0].position)
    d_id = layout.special("D")
    if not items or not isinstance(items[-1], Token) or items[-1].id != d_id:
        raise GrammarError("training stream must end with D", len(items) - 1)
    start = 0
    if not history:
        start = max(i for i, it in enumerate(items) if isinstance(it, SpeakerSlot))
    out = []
    for i in range(max(start, 1), len(items)):
        item = items[i]
        if isinstance(item, Token) and item.kind in TARGET_KINDS:
            out.append((i - 1, item.id))
    out.append((len(items) - 3, d_id))
    return out


def _batch_loss(p, model: LmModel, streams, history=True):
    cfg = model.config
    ids, slots, is_slot = _pack(streams, cfg, model.dtype)
    flat, targets = [], []
    t = ids.shape[1]
    for b, s in enumerate(streams):
        for pos, tgt in loss_targets(s, cfg.layout, history):
            flat.append(b * t + pos)
            targets.append(tgt)
    h = _hidden(p, cfg, ids, slots, is_slot)
    g = h.reshape(len(streams) * t, cfg.model_dim)[np.asarray(flat)]
    logits = g @ p["head.w"] + p["head.b"]
    return ad.cross_entropy(logits, np.asarray(targets), reduction="sum"), len(targets)


def lm_loss(model: LmModel, streams, history=True, reduction="sum") -> float:
    """Summed cross-entropy over emotion, face, speech and ``D`` targets.

    ``reduction="mean"`` divides by the number of target positions.
    """
    loss, n = _batch_loss(_wrap(model.params, grad=False), model, list(streams), history)
    value = float(loss.data)
    return value / n if reduction == "mean" else value


def lm_loss_and_grads(model: LmModel, streams, history=True) -> tuple[float, int, dict]:
    p = _wrap(model.params)
    loss, n = _batch_loss(p, model, list(streams), history)
    loss.backward()
    return float(loss.data), n, {k: v.grad for k, v in p.items()}


# training -----------------------------------------------------------------------

@dataclass
class LmTrainReport:
    loss_trace: list[tuple[int, float]]
    wall_time: float

    def smoothed(self, window=20) -> np.ndarray:
        v = np.array([l for _, l in self.loss_trace])
        return np.array([v[max(0, i - window + 1):i + 1].mean() for i in range(len(v))])

    def to_dict(self) -> dict:
        return {"loss_trace": [[s, l] for s, l in self.loss_trace], "wall_time": self.wall_time}


class Adam:
    def __init__(self, params, lr=3e-3, betas=(0.9, 0.98), eps=1e-8):
        self.lr, self.betas, self.eps, self.t = lr, betas, eps, 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.t += 1
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for k, g in grads.items():
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= (lr / c1 * m / (np.sqrt(v / c2) + self.eps)).astype(params[k].dtype)


def lm_train(model: LmModel, streams, steps=300, batch=8, lr=3e-3, seed=0, warmup=50,
             history=True, log=None) -> tuple[LmModel, LmTrainReport]:
    """Adam with linear warmup then cosine decay on the mean per-target cross-entropy."""
    streams = list(streams)
    if not streams:
        raise ValidationError("LM training set is empty")
    model = model.astype(model.dtype)
    opt = Adam(model.params, lr)
    rng = np.random.default_rng([int(seed), 11])
    trace, t0 = [], time.perf_counter()
    for step in range(steps):
        idx = rng.choice(len(streams), size=min(batch, len(streams)), replace=False)
        loss, n, grads = lm_loss_and_grads(model, [streams[i] for i in idx], history)
        loss /= n
        if not np.isfinite(loss):
            err = NumericError(f"LM training diverged at step {step}")
            err.trace = trace
            raise err
        trace.append((step, loss))
        scale = min(1.0, (step + 1) / warmup) * 0.5 * (1 + np.cos(np.pi * step / steps))
        opt.step(model.params, {k: g / n for k, g in grads.items()}, lr * max(scale, 0.05))
        if log and step % 50 == 0:
            log(f"step {step} loss {loss:.4f}")
    return model, LmTrainReport(trace, time.perf_counter() - t0)


def speech_accuracy(model: LmModel, streams, history=False) -> float:
    """Teacher-forced accuracy of the masked argmax at speech target positions."""
    layout = model.config.layout
    lo, hi = layout.region("speech")
    hits = total = 0
    for s in streams:
        items = list(s)
        logits = lm_forward(model, items)
        for pos, tgt in loss_targets(items, layout, history):
            if lo <= tgt < hi:
                hits += int(lo + np.argmax(logits[pos, lo:hi]) == tgt)
                total += 1
    return hits / max(total, 1)


# decoding ------------------------------------------------------------------------

PHASES = ("AwaitEmotion", "ExpectFace", "ExpectSpeech", "Done")


@dataclass
class DecodeState:
    phase: str = "AwaitEmotion"
    counts: dict = field(default_factory=lambda: {"emotion": 0, "face": 0, "speech": 0})

    def advance(self, tok: Token, layout: VocabLayout = DEFAULT_LAYOUT) -> None:
        if not type_mask(self, layout)[tok.id]:
            raise GrammarError(f"{tok!r} is illegal in phase {self.phase}")
        if self.phase == "AwaitEmotion":
            self.phase = "ExpectFace"
        elif tok.id == layout.special("D"):
            self.phase = "Done"
            return
        else:
            self.phase = "ExpectSpeech" if self.phase == "ExpectFace" else "ExpectFace"
        self.counts[tok.kind] += 1


def type_mask(state: DecodeState, layout: VocabLayout = DEFAULT_LAYOUT) -> np.ndarray:
    mask = np.zeros(layout.total_vocab, bool)
    if state.phase == "AwaitEmotion":
        mask[slice(*layout.region("emotion"))] = True
    elif state.phase == "ExpectFace":
        mask[slice(*layout.region("face"))] = True
        mask[layout.special("D")] = True
    elif state.phase == "ExpectSpeech":
        mask[slice(*layout.region("speech"))] = True
    return mask


def sample_masked(logits, mask, sampler: SamplerConfig, rng, full=False) -> int:
    """Mask, then top-k, then nucleus top-p, renormalize and draw one id.

    ``full=True`` skips the top-k/top-p truncation (repetition fallback).
    """
    z = np.where(mask, np.asarray(logits, dtype=np.float64), -np.inf)
    cand = np.flatnonzero(mask)
    order = cand[np.argsort(-z[cand], kind="stable")]
    if not full:
        order = order[:sampler.top_k]
    pz = z[order] - z[order[0]]
    probs = np.exp(pz)
    probs /= probs.sum()
    if not full:
        keep = int(np.searchsorted(np.cumsum(probs), sampler.top_p) + 1)
        order, probs = order[:keep], probs[:keep] / probs[:keep].sum()
    if len(order) == 1:
        return int(order[0])
    return int(order[rng.choice(len(order), p=probs)])


def _repetitive(history: list[int], sampler: SamplerConfig) -> bool:
    w = sampler.repetition_window
    if len(history) < w:
        return False
    recent = history[-w:]
    return recent.count(recent[-1]) / w >= sampler.repetition_threshold


class _Cache:
    """Numpy-only incremental forward pass with per-layer key/value caches."""

    def __init__(self, model: LmModel):
        self.model, self.cfg = model, model.config
        self.keys = [[] for _ in range(self.cfg.n_layers)]
        self.values = [[] for _ in range(self.cfg.n_layers)]
        self.pos = 0

    @staticmethod
    def _ln(x, g, b, eps=1e-5):
        mu = x.mean(-1, keepdims=True)
        xc = x - mu
        return xc / np.sqrt((xc * xc).mean(-1, keepdims=True) + eps) * g + b

    def push(self, item) -> np.ndarray:
        p, cfg = self.model.params, self.cfg
        if self.pos >= cfg.max_seq_len:
            raise ValidationError(f"sequence exceeds max_seq_len {cfg.max_seq_len}")
        if isinstance(item, SpeakerSlot):
            x = item.embedding.astype(p["spk.w"].dtype) @ p["spk.w"] + p["spk.b"]
        else:
            x = p["tok_emb"][item.id].copy()
        x = x + p["pos_emb"][self.pos]
        nh, dh = cfg.n_heads, cfg.model_dim // cfg.n_heads
        for i in range(cfg.n_layers):
            h = self._ln(x, p[f"l{i}.ln1.g"], p[f"l{i}.ln1.b"])
            q = (h @ p[f"l{i}.q.w"]).reshape(nh, dh)
            self.keys[i].append((h @ p[f"l{i}.k.w"]).reshape(nh, dh))
            self.values[i].append((h @ p[f"l{i}.v.w"]).reshape(nh, dh))
            k, v = np.stack(self.keys[i], 1), np.stack(self.values[i], 1)  # (nh, t, dh)
            s = np.einsum("hd,htd->ht", q, k) / np.sqrt(dh)
            a = np.exp(s - s.max(-1, keepdims=True))
            a /= a.sum(-1, keepdims=True)
            y = np.einsum("ht,htd->hd", a, v).reshape(-1)
            x = x + y @ p[f"l{i}.o.w"] + p[f"l{i}.o.b"]
            h = self._ln(x, p[f"l{i}.ln2.g"], p[f"l{i}.ln2.b"])
            f = h @ p[f"l{i}.fc.w"] + p[f"l{i}.fc.b"]
            f = f / (1.0 + np.exp(-f))
            x = x + f @ p[f"l{i}.proj.w"] + p[f"l{i}.proj.b"]
        self.pos += 1
        h = self._ln(x, p["ln_f.g"], p["ln_f.b"])
        return h @ p["head.w"] + p["head.b"]


@dataclass
class Generation:
    emotion: Token
    face: list[int]
    speech: list[int]
    stream: TokenStream
    seed: int

    def summary(self, layout: VocabLayout = DEFAULT_LAYOUT) -> dict:
        return {"emotion": token_to_emotion(self.emotion, layout), "n_face": len(self.face),
                "n_speech": len(self.speech), "seed": self.seed}


def lm_generate(model: LmModel, context, sampler: SamplerConfig | None = None, seed=0,
                max_pairs: int | None = None) -> Generation:
    """Sample the target turn for ``context`` under the decoding grammar.

    Stops when ``D`` is drawn, after ``max_pairs`` face/speech pairs, or when
    another pair plus the closing ``E D`` would overflow ``max_seq_len``.
    """
    cfg = model.config
    layout, sampler = cfg.layout, sampler or cfg.sampler
    items = list(context)
    diags = validate_stream(items, layout)
    if diags:
        raise GrammarError(f"malformed context: {diags[0]}", diags[0].position)
    if len(items) + 4 > cfg.max_seq_len:
        raise ValidationError(f"context of {len(items)} items leaves no room under max_seq_len {cfg.max_seq_len}")
    rng = np.random.default_rng([int(seed), 13])
    cache = _Cache(model)
    for it in items:
        logits = cache.push(it)
    state = DecodeState()
    recent = {"face": [], "speech": []}
    out = list(items)
    emotion = None
    face, speech = [], []
    d_id = layout.special("D")
    while state.phase != "Done":
        if state.phase == "ExpectFace" and (len(out) + 4 > cfg.max_seq_len
                                             or (max_pairs is not None and len(face) >= max_pairs)):
            uid = d_id
        else:
            mask = type_mask(state, layout)
            kind = {"ExpectFace": "face", "ExpectSpeech": "speech"}.get(state.phase)
            full = kind is not None and _repetitive(recent[kind], sampler)
            uid = sample_masked(logits, mask, sampler, rng, full=full)
        tok = Token(layout.kind_of(uid), uid)
        state.advance(tok, layout)
        if tok.kind == "emotion":
            emotion = tok
            out += [tok, special("S", layout)]
            cache.push(tok)
            logits = cache.push(out[-1])
        elif tok.id == d_id:
            out += [special("E", layout), tok]
        else:
            (face if tok.kind == "face" else speech).append(local_id(tok, layout))
            recent[tok.kind].append(tok.id)
            out.append(tok)
            logits = cache.push(tok)
    return Generation(emotion, face, speech, TokenStream(out), int(seed))


def grad_check(model: LmModel, streams, eps=1e-5, n_samples=30, seed=0) -> dict:
    """Central finite differences of the mean per-target loss against autodiff, in float64.

    Relative error uses ``max(|a|, |n|, 1e-7)`` as denominator.
    """
    m64 = model.astype(np.float64)
    streams = list(streams)
    _, n, grads = lm_loss_and_grads(m64, streams)
    grads = {k: g / n for k, g in grads.items()}
    rng = np.random.default_rng(seed)
    names = list(m64.params)
    worst, rows = 0.0, []
    for _ in range(n_samples):
        name = names[rng.integers(len(names))]
        flat = m64.params[name].reshape(-1)
        if name in ("tok_emb", "head.w", "head.b"):
            # most rows never touch the probe; sample the ones that do
            i = int(_touched_index(m64, streams, name, rng))
        else:
            i = int(rng.integers(flat.size))
        orig = flat[i]
        vals = []
        for d in (eps, -eps):
            flat[i] = orig + d
            vals.append(lm_loss(m64, streams, reduction="mean"))
        flat[i] = orig
        num = (vals[0] - vals[1]) / (2 * eps)
        ana = float(grads[name].reshape(-1)[i])
        rel = abs(ana - num) / max(abs(ana), abs(num), 1e-7)
        worst = max(worst, rel)
        rows.append({"param": name, "index": i, "analytic": ana, "numeric": num, "rel_error": rel})
    return {"max_rel_error": worst, "eps": eps, "checked": rows}


def _touched_index(model, streams, name, rng):
    d = model.config.model_dim
    used = sorted({it.id for s in streams for it in s if isinstance(it, Token)})
    row = int(used[rng.integers(len(used))])
    if name == "head.b":
        return row
    col = int(rng.integers(d))
    return row * d + col if name == "tok_emb" else col * model.config.layout.total_vocab + row


def lm_save(model: LmModel, path) -> None:
    save_params(path, CHECKPOINT_KIND, {"config": model.config.to_dict()}, model.params)


def lm_load(path) -> LmModel:
    meta, params = load_params(path, CHECKPOINT_KIND)
    config = LmConfig.from_dict(meta["config"])
    expected = param_shapes(config)
    if list(expected) != list(params) or any(tuple(params[k].shape) != tuple(v) for k, v in expected.items()):
        from .errors import FormatError
        raise FormatError(f"{path}: parameters do not match the stored LM configuration")
    return LmModel(params, config)
