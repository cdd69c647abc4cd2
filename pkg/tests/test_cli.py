"""Command-line surface: subcommands, exit codes, output contracts."""

import hashlib
import json
import os

import pytest

from capmatch.cli import emit_report, main
from capmatch.evaluator import report_from_ranks


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def dir_digest(path):
    h = hashlib.sha256()
    for root, _, files in sorted(os.walk(path)):
        for f in sorted(files):
            h.update(f.encode())
            h.update(open(os.path.join(root, f), "rb").read())
    return h.hexdigest()


@pytest.fixture()
def corpus_dir(tmp_path, capsys):
    out = str(tmp_path / "corpus")
    code, _, _ = run(capsys, "synth", "--n", "8", "--dim", "8", "--frames", "2",
                     "--captions", "2", "--words", "3", "--seed", "7",
                     "--out", out)
    assert code == 0
    return out


def test_synth_then_eval_smoke(corpus_dir, capsys):
    code, out, _ = run(capsys, "eval", "--archive", corpus_dir,
                       "--mode", "global", "--alpha", "0")
    assert code == 0
    payload = json.loads(out.strip())
    assert set(payload) == {"direction", "r1", "r5", "r10", "mdr", "mnr", "n"}
    assert payload["n"] == 8


def test_eval_does_not_mutate_archive(corpus_dir, capsys):
    before = dir_digest(corpus_dir)
    run(capsys, "eval", "--archive", corpus_dir)
    assert dir_digest(corpus_dir) == before


def test_synth_deterministic(tmp_path, capsys):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    run(capsys, "synth", "--n", "6", "--dim", "8", "--seed", "3", "--out", a)
    run(capsys, "synth", "--n", "6", "--dim", "8", "--seed", "3", "--out", b)
    assert dir_digest(a) == dir_digest(b)


def test_eval_deterministic_output(corpus_dir, capsys):
    _, out1, _ = run(capsys, "eval", "--archive", corpus_dir)
    _, out2, _ = run(capsys, "eval", "--archive", corpus_dir)
    assert out1 == out2


def test_filter_captions_json(corpus_dir, capsys):
    code, out, _ = run(capsys, "filter-captions", "--archive", corpus_dir,
                       "--k", "1")
    assert code == 0
    payload = json.loads(out)
    assert len(payload) == 8
    assert all(len(v) == 1 for v in payload.values())


def test_train_eval_retrieve_roundtrip(tmp_path, corpus_dir, capsys):
    ckpt = str(tmp_path / "ckpt")
    code, out, _ = run(capsys, "train", "--train", corpus_dir, "--out", ckpt,
                       "--epochs-stage1", "1", "--epochs-stage2", "1",
                       "--batch-size", "4", "--strategy", "sum",
                       "--caption-layers", "1")
    assert code == 0
    assert os.path.exists(os.path.join(ckpt, "state.json"))

    code, out, _ = run(capsys, "eval", "--archive", corpus_dir,
                       "--checkpoint", ckpt, "--direction", "both")
    assert code == 0
    assert len(out.strip().splitlines()) == 2

    code, out, _ = run(capsys, "retrieve", "--archive", corpus_dir,
                       "--checkpoint", ckpt, "--query-id", "item0000",
                       "--k", "3")
    assert code == 0
    hits = json.loads(out)
    assert len(hits) == 3 and {"id", "score"} <= set(hits[0])


def test_unknown_config_key_exit_1(tmp_path, corpus_dir, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"batch_size": 4, "bogus_key": 1}))
    code, _, err = run(capsys, "train", "--train", corpus_dir,
                       "--config", str(cfg))
    assert code == 1
    assert "bogus_key" in err


def test_usage_error_exit_1(capsys):
    code, _, err = run(capsys, "eval")  # missing --archive
    assert code == 1


def test_missing_archive_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--archive", str(tmp_path / "nope"))
    assert code == 2


def test_corrupt_archive_exit_2(corpus_dir, capsys):
    manifest = json.load(open(os.path.join(corpus_dir, "manifest.json")))
    manifest["magic"] = "EVIL"
    json.dump(manifest, open(os.path.join(corpus_dir, "manifest.json"), "w"))
    code, _, err = run(capsys, "eval", "--archive", corpus_dir)
    assert code == 2


def test_bad_flag_value_exit_1(corpus_dir, capsys):
    code, _, _ = run(capsys, "synth", "--n", "0", "--out", "/tmp/x-unused")
    assert code == 1


def test_table_format(corpus_dir, capsys):
    code, out, _ = run(capsys, "eval", "--archive", corpus_dir,
                       "--format", "table")
    assert code == 0
    header = out.splitlines()[0]
    for col in ("R@1", "R@5", "R@10", "MdR", "MnR"):
        assert col in header


def test_gradcheck_smoke(capsys):
    code, out, _ = run(capsys, "gradcheck", "--seeds", "0")
    assert code == 0
    assert "max_rel_err" in out
    for group in ("mlp", "cross", "coattn_co", "coattn_temporal", "pooling",
                  "caption_branch", "temperature"):
        assert group in out


def test_env_threads_respected(corpus_dir, capsys, monkeypatch):
    monkeypatch.setenv("CAPMATCH_THREADS", "2")
    code, out1, _ = run(capsys, "eval", "--archive", corpus_dir)
    monkeypatch.delenv("CAPMATCH_THREADS")
    code, out2, _ = run(capsys, "eval", "--archive", corpus_dir)
    assert code == 0
    # batched and pairwise evaluation agree on the report
    assert json.loads(out1) == json.loads(out2)


def test_emit_report_formatting():
    rep = report_from_ranks([1, 3, 7], "t2v")
    text = emit_report(rep, "json")
    assert '"r1": 33.3333' in text
    assert emit_report(rep, "json") == emit_report(rep, "json")
    keys = list(json.loads(text))
    assert keys == sorted(keys)


def test_ablate_smoke(tmp_path, capsys):
    train_dir, val_dir = str(tmp_path / "tr"), str(tmp_path / "va")
    run(capsys, "synth", "--n", "8", "--dim", "8", "--frames", "2",
        "--captions", "2", "--seed", "1", "--out", train_dir)
    run(capsys, "synth", "--n", "8", "--dim", "8", "--frames", "2",
        "--captions", "2", "--seed", "2", "--latent-seed", "1",
        "--split", "val", "--out", val_dir)
    code, out, _ = run(capsys, "ablate", "--train", train_dir, "--val", val_dir,
                       "--seeds", "0", "--batch-size", "4",
                       "--epochs-stage1", "1", "--epochs-stage2", "1",
                       "--caption-layers", "1", "--format", "json")
    assert code == 0
    rows = json.loads(out)
    assert [r["label"] for r in rows] == \
        ["baseline", "+aug", "+interaction", "+fusion", "combined"]
