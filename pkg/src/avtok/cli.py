"""Command-line pipeline: synth -> codec-train -> codec-eval -> ctx-build -> lm-train -> lm-generate -> metrics.

Every command takes ``--config PATH``, ``--seed N`` and ``--out DIR``; all
artifacts live under the output directory. Exit codes: 0 ok, 2 validation
error, 3 numeric divergence, 4 format or version error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import geometry
from .bpe import bpe_train
from .codec import CodecModel, codec_load, codec_save, fit_normalizer, train_codec
from .config import config_checksum, load_config, named_rng, named_seed
from .dialogue import DialogueContext, build_context, synth_dialogue, text_corpus
from .errors import AvtokError, FormatError, ValidationError
from .fsq import FACE_LEVELS, SPEECH_LEVELS, FsqConfig, code_to_index, fsq_quantize, index_to_code
from .landmarks import FRAME_DIM, read_landmarks, synth_landmarks, write_lmk
from .lm import LmConfig, LmModel, SamplerConfig, lm_generate, lm_load, lm_save, lm_train, speech_accuracy
from .stream import TokenStream, VocabLayout, validate_stream


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"missing upstream artifact {path}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _require(path: Path) -> Path:
    if not path.exists():
        raise ValidationError(f"missing upstream artifact {path}")
    return path


def _ensure_out(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out}: {exc}") from None
    probe = out / ".write-probe"
    try:
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ValidationError(f"output directory {out} is not writable: {exc}") from None


def _layout(cfg) -> VocabLayout:
    return VocabLayout(text_vocab_size=cfg["layout"]["text_vocab_size"])


def _lm_config(cfg) -> LmConfig:
    lm = cfg["lm"]
    return LmConfig(model_dim=lm["model_dim"], n_layers=lm["n_layers"], n_heads=lm["n_heads"],
                    max_seq_len=lm["max_seq_len"], layout=_layout(cfg), sampler=SamplerConfig(**cfg["sampler"]))


def _sorted_files(directory: Path, pattern: str) -> list[Path]:
    files = sorted(directory.glob(pattern))
    if not files:
        raise ValidationError(f"no {pattern} files under {directory}")
    return files


# commands --------------------------------------------------------------------

def cmd_synth(cfg, out: Path) -> dict:
    s = cfg["synth"]
    _ensure_out(out)
    seed = cfg["seed"]
    train = synth_landmarks(named_rng(seed, "landmarks/train"), s["n_sequences"], s["n_frames"])
    hold = synth_landmarks(named_rng(seed, "landmarks/holdout"), s["n_holdout"], s["n_frames"])
    written = []
    for split, data in (("train", train), ("holdout", hold)):
        d = out / "data" / split
        d.mkdir(parents=True, exist_ok=True)
        for i, seq in enumerate(data):
            write_lmk(d / f"seq_{i:04d}.lmk", seq)
            written.append(d / f"seq_{i:04d}.lmk")
    n_total = s["n_dialogues"] + s["n_holdout_dialogues"]
    for i in range(n_total):
        split = "train" if i < s["n_dialogues"] else "holdout"
        ctx = synth_dialogue(named_seed(seed, f"dialogue/{i}"), s["n_turns"], tuple(s["len_range"]),
                             s["speech_noise"])
        path = out / "data" / "dialogues" / split / f"dlg_{i:04d}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(ctx.to_json())
        written.append(path)
    manifest = {"files": {str(p.relative_to(out)): _sha(p) for p in written}, "seed": seed,
                "config_checksum": config_checksum(cfg)}
    _write_json(out / "manifest.json", manifest)
    return manifest


def _load_split(out: Path, split: str) -> np.ndarray:
    files = _sorted_files(out / "data" / split, "*.lmk")
    seqs = [read_landmarks(f) for f in files]
    if len({s.shape for s in seqs}) != 1:
        raise ValidationError(f"{split} sequences differ in length")
    return np.stack(seqs)


def cmd_codec_train(cfg, out: Path) -> dict:
    c = cfg["codec"]
    train = _load_split(out, "train")
    hold = _load_split(out, "holdout")
    model = CodecModel.init(named_seed(cfg["seed"], "codec/init"), FsqConfig(tuple(c["levels"])))
    fit_normalizer(model, train)
    model, report = train_codec(list(train), lr=c["lr"], steps=c["steps"], batch=c["batch"],
                                seed=named_seed(cfg["seed"], "codec/batches"), model=model, holdout=hold)
    codec_save(model, out / "codec.ckpt")
    rec = report.to_dict()
    rec.pop("wall_time")
    _write_json(out / "codec_train_report.json", rec)
    return {"initial_mse": report.initial_mse, "final_mse": report.final_mse, "final_lmd": report.final_lmd,
            "wall_time": report.wall_time}


def cmd_codec_eval(cfg, out: Path) -> dict:
    model = codec_load(_require(out / "codec.ckpt"))
    files = _sorted_files(out / "data" / "holdout", "*.lmk")
    seqs = [read_landmarks(f) for f in files]
    recon_dir = out / "recon"
    recon_dir.mkdir(exist_ok=True)
    tokens, dists = [], []
    for f, seq in zip(files, seqs):
        toks = model.tokenize_faces(seq)
        rec = model.decode_tokens(toks)
        write_lmk(recon_dir / f.name, rec)
        tokens.extend(toks)
        dists.append(geometry.lmd(seq, rec))
    report = {"lmd": float(np.mean(dists)), "utilization": geometry.codebook_utilization(tokens, model.cfg.implied_vocab),
              "n_sequences": len(seqs), "n_tokens": len(tokens)}
    validate_report(report, {"lmd", "utilization", "n_sequences", "n_tokens"})
    _write_json(out / "codec_eval.json", report)
    _write_json(out / "codec_tokens.json", {"tokens": tokens, "vocab": model.cfg.implied_vocab})
    return report


def _load_dialogues(out: Path, split: str) -> list[DialogueContext]:
    files = _sorted_files(out / "data" / "dialogues" / split, "*.json")
    return [DialogueContext.from_json(f.read_text()) for f in files]


def cmd_ctx_build(cfg, out: Path) -> dict:
    layout = _layout(cfg)
    train = _load_dialogues(out, "train")
    hold = _load_dialogues(out, "holdout")
    bpe = bpe_train(text_corpus(train), layout.text_vocab_size)
    bpe.save(out / "bpe.json")
    sdir = out / "streams"
    sdir.mkdir(exist_ok=True)
    n = 0
    for split, ctxs in (("train", train), ("holdout", hold)):
        for i, ctx in enumerate(ctxs):
            full = build_context(ctx, bpe, layout, with_target=True)
            bad = validate_stream(full, layout)
            if bad:
                raise ValidationError(f"{split} dialogue {i}: {bad[0]}")
            (sdir / f"{split}_{i:04d}.jsonl").write_text(full.to_jsonl())
            (sdir / f"{split}_{i:04d}.ctx.jsonl").write_text(build_context(ctx, bpe, layout).to_jsonl())
            n += 1
    return {"n_streams": n, "bpe_vocab": bpe.vocab_size}


def _load_streams(out: Path, pattern: str, layout) -> list[TokenStream]:
    streams = []
    for f in _sorted_files(out / "streams", pattern):
        s = TokenStream.from_jsonl(f.read_text(), layout)
        bad = validate_stream(s, layout)
        if bad:
            raise ValidationError(f"{f}: {bad[0]}")
        streams.append(s)
    return streams


def cmd_lm_train(cfg, out: Path) -> dict:
    lm_cfg = _lm_config(cfg)
    train = _load_streams(out, "train_[0-9][0-9][0-9][0-9].jsonl", lm_cfg.layout)
    hold = _load_streams(out, "holdout_[0-9][0-9][0-9][0-9].jsonl", lm_cfg.layout)
    model = LmModel.init(lm_cfg, seed=named_seed(cfg["seed"], "lm/init"))
    l = cfg["lm"]
    model, report = lm_train(model, train, steps=l["steps"], batch=l["batch"], lr=l["lr"],
                             seed=named_seed(cfg["seed"], "lm/batches"))
    lm_save(model, out / "lm.ckpt")
    acc = speech_accuracy(model, hold)
    rec = report.to_dict()
    rec.pop("wall_time")
    rec["heldout_speech_accuracy"] = acc
    _write_json(out / "lm_train_report.json", rec)
    return {"heldout_speech_accuracy": acc, "wall_time": report.wall_time}


def cmd_lm_generate(cfg, out: Path) -> dict:
    model = lm_load(_require(out / "lm.ckpt"))
    layout = model.config.layout
    contexts = _load_streams(out, "holdout_*.ctx.jsonl", layout)
    sampler = SamplerConfig(**cfg["sampler"])
    gdir = out / "generations"
    gdir.mkdir(exist_ok=True)
    records = []
    for i, ctx in enumerate(contexts):
        seed = named_seed(cfg["seed"], f"generate/{i}")
        gen = lm_generate(model, ctx, sampler, seed=seed, max_pairs=cfg["generate"]["max_pairs"])
        bad = validate_stream(gen.stream, layout)
        rec = dict(gen.summary(layout), index=i, valid=not bad)
        (gdir / f"gen_{i:04d}.jsonl").write_text(gen.stream.to_jsonl())
        records.append(rec)
    (out / "generations.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    return {"n": len(records), "all_valid": all(r["valid"] for r in records),
            "all_aligned": all(r["n_face"] == r["n_speech"] for r in records)}


def cmd_metrics(cfg, out: Path) -> dict:
    m = cfg["metrics"]
    ref_dir = Path(m["reference"]) if m["reference"] else out / "data" / "holdout"
    cand_dir = Path(m["candidate"]) if m["candidate"] else out / "recon"
    refs = _sorted_files(ref_dir, "*.lmk") if ref_dir.is_dir() else [_require(ref_dir)]
    cands = _sorted_files(cand_dir, "*.lmk") if cand_dir.is_dir() else [_require(cand_dir)]
    if len(refs) != len(cands):
        raise ValidationError(f"{len(refs)} reference files but {len(cands)} candidate files")
    pairs = [(read_landmarks(a), read_landmarks(b)) for a, b in zip(refs, cands)]
    for (a, b), f in zip(pairs, refs):
        if a.shape != b.shape:
            raise ValidationError(f"shape mismatch for {f.name}: {a.shape} vs {b.shape}")
    n_frames = sum(a.shape[0] for a, _ in pairs)
    n_points = FRAME_DIM // 2
    dist = float(np.mean([geometry.lmd(a, b) for a, b in pairs]))
    sim, aff = [], []
    for a, b in pairs:
        pa, pb = geometry._points(a), geometry._points(b)
        for src, dst in zip(pb, pa):
            sim.append(geometry.fit_residual(src, dst, geometry.fit_similarity(src, dst)))
            aff.append(geometry.fit_residual(src, dst, geometry.fit_affine(src, dst)))
    report = {
        "config_checksum": config_checksum(cfg),
        "records": [
            geometry.metric_record("lmd", dist, n_frames, n_points),
            geometry.metric_record("similarity_fit_residual", float(np.mean(sim)), n_frames, n_points),
            geometry.metric_record("affine_fit_residual", float(np.mean(aff)), n_frames, n_points),
        ],
    }
    tok_path = out / "codec_tokens.json"
    if tok_path.exists():
        tok = _read_json(tok_path)
        util = geometry.codebook_utilization(tok["tokens"], tok["vocab"])
        report["records"].append(geometry.metric_record("codebook_utilization", util, len(tok["tokens"]), 0))
    gen_path = out / "generations.jsonl"
    if gen_path.exists():
        recs = [json.loads(l) for l in gen_path.read_text().splitlines() if l.strip()]
        report["generations"] = {"n": len(recs), "valid": sum(r["valid"] for r in recs),
                                 "aligned": sum(r["n_face"] == r["n_speech"] for r in recs)}
    lm_report = out / "lm_train_report.json"
    if lm_report.exists():
        report["heldout_speech_accuracy"] = _read_json(lm_report)["heldout_speech_accuracy"]
    _write_json(out / "metrics.json", report)
    return {"lmd": dist}


def cmd_fsq_selftest(cfg, out: Path) -> dict:
    face, spk = FsqConfig(FACE_LEVELS), FsqConfig(SPEECH_LEVELS)
    ids = np.arange(face.implied_vocab)
    bijective = bool(np.array_equal(code_to_index(index_to_code(ids, face), face), ids))
    grid = np.linspace(-4, 4, 41)
    mesh = np.stack(np.meshgrid(grid, grid, grid, grid, indexing="ij"), -1).reshape(-1, 4)
    reachable = len(np.unique(code_to_index(fsq_quantize(mesh, face), face)))
    result = {"face_vocab": face.implied_vocab, "speech_vocab": spk.implied_vocab, "bijective": bijective,
              "reachable_codes": reachable}
    if not (bijective and face.implied_vocab == 1000 and spk.implied_vocab == 6561 and reachable == 1000):
        raise ValidationError(f"FSQ self-test failed: {result}")
    return result


def validate_report(report: dict, required: set) -> None:
    missing = required - set(report)
    if missing:
        raise ValidationError(f"report lacks fields {sorted(missing)}")
    for key in ("utilization",):
        if key in report and not 0.0 <= report[key] <= 1.0:
            raise ValidationError(f"{key} must lie in [0, 1], got {report[key]}")


COMMANDS = {
    "synth": cmd_synth,
    "codec-train": cmd_codec_train,
    "codec-eval": cmd_codec_eval,
    "ctx-build": cmd_ctx_build,
    "lm-train": cmd_lm_train,
    "lm-generate": cmd_lm_generate,
    "metrics": cmd_metrics,
    "fsq-selftest": cmd_fsq_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avtok", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the configured root seed")
        p.add_argument("--out", type=Path, default=Path("run"), help="artifact directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        result = COMMANDS[args.command](cfg, args.out)
    except AvtokError as exc:
        print(f"avtok {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
