import json
import shutil

import numpy as np
import pytest

from avtok.cli import main
from avtok.landmarks import write_lmk

PIPELINE = ["synth", "codec-train", "codec-eval", "ctx-build", "lm-train", "lm-generate", "metrics"]

TINY = {
    "synth": {"n_sequences": 8, "n_frames": 12, "n_holdout": 3, "n_dialogues": 6,
              "n_holdout_dialogues": 4, "len_range": [3, 6]},
    "codec": {"steps": 20, "batch": 4},
    "layout": {"text_vocab_size": 300},
    "lm": {"model_dim": 16, "n_layers": 1, "n_heads": 2, "max_seq_len": 256, "steps": 5, "batch": 2},
    "generate": {"max_pairs": 8},
}


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def run(cmd, cfg, out, *extra):
    return main([cmd, "--config", cfg, "--out", str(out), *extra])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "tiny.json", TINY)
    for cmd in PIPELINE:
        assert run(cmd, cfg, root / "run") == 0, cmd
    return root, cfg


def test_synth_is_reproducible(pipeline, tmp_path):
    root, cfg = pipeline
    assert run("synth", cfg, tmp_path / "again") == 0
    a = json.loads((root / "run" / "manifest.json").read_text())
    b = json.loads((tmp_path / "again" / "manifest.json").read_text())
    assert a == b
    assert run("synth", cfg, tmp_path / "other", "--seed", "1") == 0
    c = json.loads((tmp_path / "other" / "manifest.json").read_text())
    assert c["files"] != a["files"]


def test_history_length(pipeline):
    root, _ = pipeline
    for f in (root / "run" / "data" / "dialogues").rglob("*.json"):
        assert len(json.loads(f.read_text())["history"]) == 3


def test_manifest_complete(pipeline):
    run_dir = pipeline[0] / "run"
    manifest = json.loads((run_dir / "manifest.json").read_text())["files"]
    on_disk = {str(p.relative_to(run_dir)) for p in (run_dir / "data").rglob("*") if p.is_file()}
    assert set(manifest) == on_disk


def test_reports(pipeline):
    run_dir = pipeline[0] / "run"
    ev = json.loads((run_dir / "codec_eval.json").read_text())
    assert 0 <= ev["utilization"] <= 1 and ev["lmd"] >= 0
    assert len(json.loads((run_dir / "codec_train_report.json").read_text())["loss_trace"]) == 21
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert metrics["config_checksum"].startswith("sha256:")
    names = [r["metric"] for r in metrics["records"]]
    assert names == ["lmd", "similarity_fit_residual", "affine_fit_residual", "codebook_utilization"]


def test_generation_records(pipeline):
    gens = (pipeline[0] / "run" / "generations.jsonl").read_text().splitlines()
    assert len(gens) == 4
    for line in gens:
        rec = json.loads(line)
        assert rec["valid"] and rec["n_face"] == rec["n_speech"]
        assert set(rec) >= {"emotion", "n_face", "n_speech", "seed"}


def test_greedy_generation_repeats(pipeline, tmp_path):
    root, _ = pipeline
    cfg = write_config(tmp_path / "greedy.json", dict(TINY, sampler={"top_k": 1}))
    out = tmp_path / "run"
    shutil.copytree(root / "run", out)
    assert run("lm-generate", cfg, out) == 0
    first = (out / "generations.jsonl").read_bytes()
    assert run("lm-generate", cfg, out) == 0
    assert (out / "generations.jsonl").read_bytes() == first


def test_identical_inputs_zero_lmd(pipeline, tmp_path):
    root, _ = pipeline
    ref = str(root / "run" / "data" / "holdout")
    cfg = write_config(tmp_path / "m.json", dict(TINY, metrics={"reference": ref, "candidate": ref}))
    assert run("metrics", cfg, tmp_path) == 0
    rec = json.loads((tmp_path / "metrics.json").read_text())["records"]
    assert rec[0]["value"] == 0.0
    assert rec[1]["value"] < 1e-6 and rec[2]["value"] < 1e-6


def test_shape_mismatch_exit(tmp_path):
    rng = np.random.default_rng(0)
    write_lmk(tmp_path / "a.lmk", rng.uniform(0, 1, (5, 190)))
    write_lmk(tmp_path / "b.lmk", rng.uniform(0, 1, (6, 190)))
    cfg = write_config(tmp_path / "m.json", {"metrics": {"reference": str(tmp_path / "a.lmk"),
                                                         "candidate": str(tmp_path / "b.lmk")}})
    assert run("metrics", cfg, tmp_path / "out") == 2
    assert not (tmp_path / "out" / "metrics.json").exists()


def test_unknown_key_exit_and_no_side_effects(tmp_path):
    cfg = write_config(tmp_path / "bad.json", {"synth": {"n_sequence": 3}})
    assert run("synth", cfg, tmp_path / "out") == 2
    assert not (tmp_path / "out").exists()


def test_missing_checkpoint(tmp_path):
    cfg = write_config(tmp_path / "c.json", TINY)
    assert run("codec-eval", cfg, tmp_path) == 2
    assert run("lm-generate", cfg, tmp_path) == 2


def test_checkpoint_version_mismatch(pipeline, tmp_path):
    root, cfg = pipeline
    out = tmp_path / "run"
    shutil.copytree(root / "run", out)
    raw = (out / "codec.ckpt").read_bytes()
    head, _, blob = raw.partition(b"\n")
    meta = json.loads(head)
    meta["version"] = 99
    (out / "codec.ckpt").write_bytes(json.dumps(meta).encode() + b"\n" + blob)
    assert run("codec-eval", cfg, out) == 4


def test_malformed_stream_reported(pipeline, tmp_path, capsys):
    root, cfg = pipeline
    out = tmp_path / "run"
    shutil.copytree(root / "run", out)
    f = out / "streams" / "holdout_0000.ctx.jsonl"
    f.write_text("".join(f.read_text().splitlines(keepends=True)[1:]))
    capsys.readouterr()
    assert run("lm-generate", cfg, out) == 2
    assert "position 0" in capsys.readouterr().err


def test_fsq_selftest(tmp_path, capsys):
    assert main(["fsq-selftest", "--out", str(tmp_path)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["face_vocab"] == 1000 and res["speech_vocab"] == 6561 and res["bijective"]


def test_pipeline_determinism(pipeline, tmp_path):
    root, cfg = pipeline
    for cmd in PIPELINE:
        assert run(cmd, cfg, tmp_path / "run") == 0
    assert (tmp_path / "run" / "metrics.json").read_bytes() == (root / "run" / "metrics.json").read_bytes()
