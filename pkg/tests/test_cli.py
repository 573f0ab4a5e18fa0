import json
import subprocess
import sys

import numpy as np
import pytest

from mmkws import augmentation as aug
from mmkws import io as mio
from mmkws.cli import main
from mmkws.config import ModelConfig
from mmkws.model import MMKWS

from test_corpus import tree_digest

SMALL = ["--set", "n_mels=8", "--set", "train_positives=2", "--set", "train_hard=2",
         "--set", "train_easy=2"]
ARCH = ["--d", "8", "--heads", "2", "--enc-layers", "1", "--attn-layers", "1", "--gru-hidden", "6"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["resources", "--out", str(root / "res"), "--n-words", "200", "--seed", "3"]) == 0
    argv = ["synth", "--lexicon", str(root / "res/lexicon.tsv"), "--out", str(root / "data"),
            "--seed", "5", "--n-train", "30", "--n-test", "32"] + SMALL
    assert main(argv) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "run"), "--steps", "3",
                 "--batch-anchors", "4"] + ARCH) == 0
    return root


def test_synth_reproducible_and_counts(capsys, workspace, tmp_path):
    code, out, err = run(capsys, "synth", "--lexicon", workspace / "res/lexicon.tsv", "--out",
                         tmp_path / "again", "--seed", 5, "--n-train", 30, "--n-test", 32, *SMALL)
    assert code == 0
    assert err.startswith("# config ")
    assert json.loads(out)["test_keywords"] == 32
    assert tree_digest(workspace / "data") == tree_digest(tmp_path / "again")
    meta = json.loads((tmp_path / "again/corpus.json").read_text())
    assert len(meta["test_keywords"]) == 32 and meta["run_config"]["n_mels"] == 8


def test_synth_vocab_restricts_words(capsys, workspace, tmp_path):
    words = (workspace / "res/words.txt").read_text().split()[:120]
    (tmp_path / "v.txt").write_text("\n".join(words) + "\n")
    code, _, _ = run(capsys, "synth", "--lexicon", workspace / "res/lexicon.tsv", "--vocab", tmp_path / "v.txt",
                     "--out", tmp_path / "d", "--seed", 1, "--n-train", 5, "--n-test", 3, *SMALL)
    assert code == 0
    used = {w for line in (tmp_path / "d/train.jsonl").read_text().splitlines()
            for w in json.loads(line)["enroll_text"].split()}
    assert used <= set(words)


def test_synth_usage_and_constraint_errors(capsys, workspace, tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["synth", "--out", str(tmp_path / "x")])
    assert e.value.code == 2
    assert "--lexicon" in capsys.readouterr().err
    words = (workspace / "res/words.txt").read_text().split()[:24]
    (tmp_path / "v.txt").write_text("\n".join(words) + "\n")
    code, _, err = run(capsys, "synth", "--lexicon", workspace / "res/lexicon.tsv", "--vocab", tmp_path / "v.txt",
                       "--out", tmp_path / "y", "--n-train", 50, "--n-test", 50, "--set", "d_hard=0", *SMALL)
    assert code == 1 and "error:" in err and "confusable" in err
    code, _, err = run(capsys, "synth", "--lexicon", workspace / "res/lexicon.tsv", "--out",
                       workspace / "data", *SMALL)
    assert code == 1 and "--force" in err


def test_binary_entry_point_usage_error():
    r = subprocess.run([sys.executable, "-m", "mmkws.cli", "train"], capture_output=True, text=True)
    assert r.returncode == 2 and "usage" in r.stderr


def _phrases(workspace):
    return [json.loads(line)["enroll_text"] for line in (workspace / "data/train.jsonl").read_text().splitlines()]


def test_mine_matches_library(capsys, workspace, tmp_path):
    phrases = sorted(set(_phrases(workspace)))
    (tmp_path / "c.txt").write_text("\n".join(phrases) + "\n")
    target = phrases[0]
    code, out, _ = run(capsys, "mine", "--target", target, "--corpus", tmp_path / "c.txt", "--lexicon",
                       workspace / "res/lexicon.tsv", "--k", 1, "--semantic-table", workspace / "res/semantic.txt")
    assert code == 0
    lex = aug.Lexicon.load(workspace / "res/lexicon.tsv")
    table = aug.SemanticTable.load(workspace / "res/semantic.txt")
    recs = [json.loads(line) for line in out.splitlines()]
    assert sum(r["kind"] == "phonetic" for r in recs) == 1
    ref = aug.mine_confusables(target, [tuple(p.split()) for p in phrases], lex, 1, table)
    assert out == ref.to_jsonl()
    assert any(r["kind"] == "semantic" for r in recs)


def test_mine_without_semantic_entry_warns(capsys, workspace, tmp_path):
    (tmp_path / "c.txt").write_text("\n".join(sorted(set(_phrases(workspace)))) + "\n")
    (tmp_path / "sem.txt").write_text("zzz 1 0\nyyy 0 1\n")
    target = _phrases(workspace)[0]
    code, out, err = run(capsys, "mine", "--target", target, "--corpus", tmp_path / "c.txt", "--lexicon",
                         workspace / "res/lexicon.tsv", "--k", 3, "--semantic-table", tmp_path / "sem.txt")
    assert code == 0 and "warning:" in err
    kinds = {json.loads(line)["kind"] for line in out.splitlines()}
    assert "phonetic" in kinds and "semantic" not in kinds


def test_train_outputs(workspace):
    run_dir = workspace / "run"
    man, tensors = mio.load_checkpoint(run_dir / "model.ckpt")
    assert man["config"]["d"] == 8 and man["train_config"]["steps"] == 3
    assert "data_hash" in man and "config_hash" in man
    lines = (run_dir / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss_utt,loss_phon,loss_text,total" and len(lines) == 4


def test_zero_steps_checkpoint_is_initialisation(capsys, workspace, tmp_path):
    code, _, _ = run(capsys, "train", "--data", workspace / "data", "--out", tmp_path, "--steps", 0,
                     "--seed", 11, *ARCH)
    assert code == 0
    man, tensors = mio.load_checkpoint(tmp_path / "model.ckpt")
    init = MMKWS(ModelConfig(**man["config"]), seed=11).state()
    assert list(tensors) == list(init)
    for k, v in init.items():
        assert v.tobytes() == tensors[k].tobytes()


def test_train_config_file_and_env(capsys, workspace, tmp_path, monkeypatch):
    (tmp_path / "run.cfg").write_text("steps = 1\nlr = 0.01\ngru_hidden = 4\n")
    monkeypatch.setenv("MMKWS_LR", "0.02")
    code, _, err = run(capsys, "train", "--data", workspace / "data", "--out", tmp_path / "o",
                       "--config", tmp_path / "run.cfg", "--batch-anchors", 2, "--d", 8, "--heads", 2)
    assert code == 0
    cfg = json.loads(err.splitlines()[0][len("# config "):])
    assert cfg["train"]["steps"] == 1 and cfg["train"]["lr"] == 0.02 and cfg["model"]["gru_hidden"] == 4


def test_eval_scores_file(capsys, tmp_path):
    recs = [{"score": s, "label": y, "split": sp} for sp in ("easy", "hard")
            for s, y in ((0.9, 1), (0.8, 1), (0.2, 0), (0.1, 0))]
    (tmp_path / "s.jsonl").write_text("".join(json.dumps(r) + "\n" for r in recs))
    code, out, _ = run(capsys, "eval", "--scores", tmp_path / "s.jsonl", "--report", tmp_path / "r.json")
    assert code == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["eer_easy"] == 0.0 and rep["auc_hard"] == 1.0 and rep["n_pairs"] == 8
    assert {"acc_close", "acc_open", "config_hash"} <= set(rep)


def test_eval_checkpoint_report(capsys, workspace, tmp_path):
    code, out, _ = run(capsys, "eval", "--ckpt", workspace / "run/model.ckpt", "--data", workspace / "data",
                       "--report", tmp_path / "r.json")
    assert code == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    for k in ("auc_easy", "auc_hard", "eer_easy", "eer_hard", "acc_close", "acc_open", "n_pairs", "config_hash"):
        assert rep[k] is not None
    man, _ = mio.load_checkpoint(workspace / "run/model.ckpt")
    assert rep["config_hash"] == man["config_hash"]


def test_eval_refuses_conflicting_architecture(capsys, workspace):
    code, _, err = run(capsys, "eval", "--ckpt", workspace / "run/model.ckpt", "--data", workspace / "data",
                       "--d", 16)
    assert code == 1 and "conflicts" in err and "d: checkpoint 8, requested 16" in err
    code, _, _ = run(capsys, "eval", "--ckpt", workspace / "run/model.ckpt", "--data", workspace / "data",
                     "--d", 16, "--force", "--templates", 0)
    assert code == 0


def test_corrupt_and_mismatched_checkpoints(capsys, workspace, tmp_path):
    raw = (workspace / "run/model.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"XXXX" + raw[4:])
    code, _, err = run(capsys, "bench", "--ckpt", tmp_path / "bad.ckpt", "--reps", 1, "--warmup", 0)
    assert code == 1 and "bad checkpoint header" in err

    man, tensors = mio.load_checkpoint(workspace / "run/model.ckpt")
    tensors["fuse.w"] = np.zeros((7, 1))
    mio.save_checkpoint(tmp_path / "shape.ckpt", tensors, {k: v for k, v in man.items() if k != "tensors"})
    code, _, err = run(capsys, "bench", "--ckpt", tmp_path / "shape.ckpt", "--reps", 1, "--warmup", 0)
    assert code == 1 and "fuse.w: expected (6, 1), found (7, 1)" in err


def test_spot_and_export(capsys, workspace, tmp_path):
    data = workspace / "data"
    pair = json.loads((data / "test.jsonl").read_text().splitlines()[0])
    code, out, _ = run(capsys, "spot", "--ckpt", workspace / "run/model.ckpt", "--keyword", pair["enroll_text"],
                       "--query", data / pair["query_feat"], "--templates", *[data / t for t in pair["template_feats"]])
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("p_utt ") and lines[1] in ("YES", "NO")
    p = float(lines[0].split()[1])
    code, out, _ = run(capsys, "spot", "--ckpt", workspace / "run/model.ckpt", "--keyword", pair["enroll_text"],
                       "--query", data / pair["query_feat"], "--threshold", 0.0)
    assert out.splitlines()[1] == "YES" and 0 < p < 1

    for module in ("qtam", "qaam"):
        code, out, _ = run(capsys, "export-attn", "--ckpt", workspace / "run/model.ckpt", "--data", data,
                           "--pair", pair["pair_id"], "--out", tmp_path / f"{module}.attn", "--module", module)
        assert code == 0
        info = json.loads(out)
        maps = mio.load_attention(tmp_path / f"{module}.attn")
        L = sum(info["boundaries"])
        assert all(m.shape == (L, L) for _, _, m in maps)
        assert all(np.allclose(m.sum(axis=1), 1.0, atol=1e-6) for _, _, m in maps)
    code, _, err = run(capsys, "export-attn", "--ckpt", workspace / "run/model.ckpt", "--data", data,
                       "--pair", "nope", "--out", tmp_path / "x.attn")
    assert code == 1 and "not found" in err


def test_bench_reports_each_size(capsys, workspace):
    code, out, _ = run(capsys, "bench", "--ckpt", workspace / "run/model.ckpt", "--reps", 5, "--warmup", 1,
                       "--sizes", "20,40", "--threads", 1)
    assert code == 0
    rows = [json.loads(line) for line in out.splitlines()]
    assert [r["frames"] for r in rows] == [20, 40] and all(r["samples"] == 5 for r in rows)
