"""Landmark codec: causal encoder, FSQ bottleneck, causal decoder.

Architecture, per frame and causal in time::

    190 -> linear -> 128 -> 3 x [h + conv(silu(conv(silu(h))))]      encoder
    128 -> linear (FSQ-down) -> 4 -> FSQ round                       tokenizer
    4 -> linear (FSQ-up) -> 128 -> 3 x residual block -> silu -> linear -> 190

Frames are standardized by frozen buffers ``norm.mean`` (per coordinate)
and ``norm.scale`` (one global scale) fitted on the training set; the
decoder output is mapped back to coordinates. The training MSE is measured
in standardized units.

All temporal convolutions have kernel 3 and are left padded, so every
output frame depends only on the current and earlier frames. One FSQ code,
hence one token, is produced per frame.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import load_params, save_params
from .errors import FormatError, NumericError, ValidationError
from .fsq import FsqConfig, code_to_index, fsq_dequantize, fsq_quantize, index_to_code
from .geometry import lmd
from .landmarks import FRAME_DIM, check_sequence

CHECKPOINT_KIND = "avtok-codec"

DEFAULT_ARCH = {"input_dim": FRAME_DIM, "latent_dim": 128, "n_blocks": 3, "kernel": 3}


def param_shapes(arch: dict, code_dim: int) -> dict[str, tuple]:
    d, h, k = arch["input_dim"], arch["latent_dim"], arch["kernel"]
    shapes = {"norm.mean": (d,), "norm.scale": (1,), "enc_in.w": (d, h), "enc_in.b": (h,)}
    for side in ("enc", "dec"):
        if side == "dec":
            shapes.update({"fsq_down.w": (h, code_dim), "fsq_down.b": (code_dim,),
                           "fsq_up.w": (code_dim, h), "fsq_up.b": (h,)})
        for i in range(arch["n_blocks"]):
            for j in (1, 2):
                shapes[f"{side}.{i}.conv{j}.w"] = (k, h, h)
                shapes[f"{side}.{i}.conv{j}.b"] = (h,)
    shapes.update({"dec_out.w": (h, d), "dec_out.b": (d,)})
    return shapes


def init_params(arch: dict, cfg: FsqConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    for name, shape in param_shapes(arch, cfg.dim).items():
        if name == "norm.scale":
            params[name] = np.ones(shape, dtype=np.float32)
            continue
        if name.endswith(".b") or name == "norm.mean":
            params[name] = np.zeros(shape, dtype=np.float32)
            continue
        fan_in = int(np.prod(shape[:-1]))
        std = 1.0 / np.sqrt(fan_in)
        if name.endswith("conv2.w"):
            std *= 0.5  # keeps the residual stream from growing at init
        params[name] = (rng.standard_normal(shape) * std).astype(np.float32)
    return params


@dataclass
class CodecModel:
    params: dict[str, np.ndarray]
    cfg: FsqConfig = field(default_factory=FsqConfig)
    arch_meta: dict = field(default_factory=lambda: dict(DEFAULT_ARCH, seed=0))

    def __post_init__(self):
        expected = param_shapes(self.arch_meta, self.cfg.dim)
        if list(expected) != list(self.params):
            raise FormatError("codec parameter names do not match the architecture")
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != tuple(shape):
                raise FormatError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    @classmethod
    def init(cls, seed=0, cfg: FsqConfig | None = None, **arch) -> "CodecModel":
        cfg = cfg or FsqConfig()
        meta = dict(DEFAULT_ARCH, **arch, seed=int(seed))
        return cls(init_params(meta, cfg, np.random.default_rng(seed)), cfg, meta)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "CodecModel":
        return CodecModel({k: v.astype(dtype) for k, v in self.params.items()}, self.cfg, dict(self.arch_meta))

    def copy(self) -> "CodecModel":
        return self.astype(self.dtype)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    # inference -----------------------------------------------------------

    def _batch(self, seq) -> np.ndarray:
        seq = check_sequence(seq)
        return seq.astype(self.dtype)[None]

    def encode_frames(self, seq) -> np.ndarray:
        """Per-frame latents, shape ``(k, latent_dim)``."""
        p = _wrap(self.params, grad=False)
        return _checked(_encode(p, ad.Tensor(self._batch(seq)), self.arch_meta).data[0], "encode")

    def code_latents(self, seq) -> np.ndarray:
        """Pre-round FSQ-down outputs, shape ``(k, len(levels))``."""
        p = _wrap(self.params, grad=False)
        h = _encode(p, ad.Tensor(self._batch(seq)), self.arch_meta)
        return _checked((h @ p["fsq_down.w"] + p["fsq_down.b"]).data[0], "fsq-down")

    def tokenize_faces(self, seq) -> list[int]:
        codes = fsq_quantize(self.code_latents(seq), self.cfg)
        return [int(i) for i in code_to_index(codes, self.cfg)]

    def decode_tokens(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 1 or tokens.size == 0:
            raise ValidationError("decode_tokens needs a non-empty 1-D token list")
        q = fsq_dequantize(index_to_code(tokens, self.cfg), self.cfg).astype(self.dtype)
        p = _wrap(self.params, grad=False)
        return _checked(_decode(p, ad.Tensor(q[None]), self.arch_meta).data[0], "decode")

    def reconstruct(self, seq) -> np.ndarray:
        return self.decode_tokens(self.tokenize_faces(seq))


def _checked(a: np.ndarray, stage: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite activations in codec {stage} stage")
    return a


FROZEN = ("norm.mean", "norm.scale")


def _wrap(params, grad=True) -> dict[str, ad.Tensor]:
    return {k: ad.Tensor(v, requires_grad=grad and k not in FROZEN) for k, v in params.items()}


def _blocks(p, h, side, n_blocks):
    for i in range(n_blocks):
        r = ad.causal_conv1d(ad.silu(h), p[f"{side}.{i}.conv1.w"], p[f"{side}.{i}.conv1.b"])
        r = ad.causal_conv1d(ad.silu(r), p[f"{side}.{i}.conv2.w"], p[f"{side}.{i}.conv2.b"])
        h = h + r
    return h


def _encode(p, x, arch):
    x = (x - p["norm.mean"]) / p["norm.scale"]
    h = x @ p["enc_in.w"] + p["enc_in.b"]
    return _blocks(p, h, "enc", arch["n_blocks"])


def _decode(p, q, arch, standardized=False):
    h = q @ p["fsq_up.w"] + p["fsq_up.b"]
    h = _blocks(p, h, "dec", arch["n_blocks"])
    y = ad.silu(h) @ p["dec_out.w"] + p["dec_out.b"]
    return y if standardized else y * p["norm.scale"] + p["norm.mean"]


def codec_loss(p: dict[str, ad.Tensor], x: np.ndarray, cfg: FsqConfig, arch: dict, relaxed=False) -> ad.Tensor:
    """MSE, in standardized units, between a ``(batch, k, 190)`` batch and its reconstruction."""
    h = _encode(p, ad.Tensor(x), arch)
    z = h @ p["fsq_down.w"] + p["fsq_down.b"]
    q = ad.fsq_ste(z, cfg, relaxed=relaxed)
    target = (x - p["norm.mean"].data) / p["norm.scale"].data
    return ad.mse(_decode(p, q, arch, standardized=True), target)


def loss_and_grads(model: CodecModel, x: np.ndarray, relaxed=False) -> tuple[float, dict[str, np.ndarray]]:
    p = _wrap(model.params)
    loss = codec_loss(p, np.asarray(x, dtype=model.dtype), model.cfg, model.arch_meta, relaxed)
    loss.backward()
    return float(loss.data), {k: t.grad for k, t in p.items()}


# training -------------------------------------------------------------------

@dataclass
class TrainReport:
    loss_trace: list[tuple[int, float]]
    final_lmd: float
    wall_time: float
    initial_mse: float = float("nan")
    final_mse: float = float("nan")

    def smoothed(self, window=50) -> np.ndarray:
        v = np.array([l for _, l in self.loss_trace])
        return np.array([v[max(0, i - window + 1):i + 1].mean() for i in range(len(v))])

    def to_dict(self) -> dict:
        return {"loss_trace": [[s, l] for s, l in self.loss_trace], "final_lmd": self.final_lmd,
                "wall_time": self.wall_time, "initial_mse": self.initial_mse, "final_mse": self.final_mse}


def fit_normalizer(model: CodecModel, data: np.ndarray) -> None:
    """Set the frozen standardization buffers from training frames."""
    frames = np.asarray(data, dtype=np.float64).reshape(-1, model.arch_meta["input_dim"])
    mean = frames.mean(0)
    scale = max(float((frames - mean).std()), 1e-6)
    model.params["norm.mean"] = mean.astype(model.dtype)
    model.params["norm.scale"] = np.array([scale], dtype=model.dtype)


def dataset_mse(model: CodecModel, data: np.ndarray, chunk=64) -> float:
    total = 0.0
    for i in range(0, len(data), chunk):
        x = np.asarray(data[i:i + chunk], dtype=model.dtype)
        p = _wrap(model.params, grad=False)
        total += float(codec_loss(p, x, model.cfg, model.arch_meta).data) * len(x)
    return total / len(data)


def dataset_lmd(model: CodecModel, data) -> float:
    return float(np.mean([lmd(seq, model.reconstruct(seq)) for seq in data]))


def train_codec(dataset, lr=0.2, steps=2000, batch=16, seed=0, model: CodecModel | None = None,
                holdout=None, log=None) -> tuple[CodecModel, TrainReport]:
    """Plain fixed-step SGD on the reconstruction MSE.

    ``dataset`` is a sequence of equal-length ``(k, 190)`` arrays. The loss
    trace has one entry per step (the minibatch loss before that step's
    update) plus a final entry, so ``steps=0`` yields a single entry.
    """
    data = np.stack([check_sequence(s) for s in dataset]).astype(np.float32) if len(dataset) else None
    if data is None:
        raise ValidationError("training dataset is empty")
    if lr <= 0 or steps < 0 or batch <= 0:
        raise ValidationError("learning rate and batch size must be positive, steps non-negative")
    if model is None:
        model = CodecModel.init(seed)
        fit_normalizer(model, data)
    else:
        model = model.copy()
    rng = np.random.default_rng([seed, 1])
    t0 = time.perf_counter()
    initial = dataset_mse(model, data)
    trace = []
    for step in range(steps + 1):
        idx = rng.choice(len(data), size=min(batch, len(data)), replace=False)
        if step == steps:
            loss = dataset_mse(model, data[idx])
        else:
            loss, grads = loss_and_grads(model, data[idx])
        if not np.isfinite(loss):
            err = NumericError(f"codec training diverged at step {step}")
            err.trace = trace
            raise err
        trace.append((step, loss))
        if step == steps:
            break
        for k, g in grads.items():
            if g is None:
                continue
            model.params[k] -= np.float32(lr) * g.astype(np.float32)
        if log and step % 200 == 0:
            log(f"step {step} mse {loss:.6f}")
    eval_set = data if holdout is None else np.asarray(holdout)
    report = TrainReport(trace, dataset_lmd(model, eval_set[:50]), time.perf_counter() - t0,
                         initial_mse=initial, final_mse=dataset_mse(model, data))
    return model, report


# gradient check ---------------------------------------------------------------

def grad_check(model: CodecModel, probe, eps=1e-5, n_samples=40, seed=0, relaxed=True) -> dict:
    """Compare analytic MSE gradients with central finite differences.

    Runs in float64 on a copy of the model. With ``relaxed=True`` rounding is
    bypassed so the loss is smooth in every parameter; the hard path is only
    smooth in FSQ-up and decoder parameters, which are then the only ones
    sampled. Relative error uses ``max(|a|, |n|, 1e-7)`` as denominator.
    """
    probe = check_sequence(probe)
    if probe.shape[0] > 4:
        raise ValidationError("grad_check probes are limited to k <= 4 frames")
    if not 1e-6 <= eps <= 1e-3:
        raise ValidationError("eps must lie in [1e-6, 1e-3]")
    m64 = model.astype(np.float64)
    x = probe.astype(np.float64)[None]
    _, grads = loss_and_grads(m64, x, relaxed=relaxed)
    rng = np.random.default_rng(seed)
    names = [n for n in m64.params if n not in FROZEN and (relaxed or n.startswith(("fsq_up", "dec")))]
    worst, rows = 0.0, []
    for _ in range(n_samples):
        name = names[rng.integers(len(names))]
        flat = m64.params[name].reshape(-1)
        i = int(rng.integers(flat.size))
        num = finite_difference(m64, x, name, i, eps, relaxed)
        ana = float(grads[name].reshape(-1)[i])
        rel = abs(ana - num) / max(abs(ana), abs(num), 1e-7)
        worst = max(worst, rel)
        rows.append({"param": name, "index": i, "analytic": ana, "numeric": num, "rel_error": rel})
    return {"max_rel_error": worst, "eps": eps, "checked": rows}


def finite_difference(model: CodecModel, x, name: str, index: int, eps: float, relaxed=True) -> float:
    flat = model.params[name].reshape(-1)
    orig = flat[index]
    vals = []
    for delta in (eps, -eps):
        flat[index] = orig + delta
        p = _wrap(model.params, grad=False)
        vals.append(float(codec_loss(p, x, model.cfg, model.arch_meta, relaxed).data))
    flat[index] = orig
    return (vals[0] - vals[1]) / (2 * eps)


# checkpoints -----------------------------------------------------------------

def codec_save(model: CodecModel, path) -> None:
    meta = {"arch_meta": model.arch_meta, "cfg": {"levels": list(model.cfg.levels)}}
    save_params(path, CHECKPOINT_KIND, meta, model.params)


def codec_load(path) -> CodecModel:
    meta, params = load_params(path, CHECKPOINT_KIND)
    return CodecModel(params, FsqConfig(tuple(meta["cfg"]["levels"])), meta["arch_meta"])
