import dataclasses
import subprocess
import sys

import pytest

from relectra import synthetic
from relectra.checkpoint import load as load_records
from relectra.cli import run
from relectra.config import RunConfig, parse_config, parse_config_text
from relectra.electra import Checkpoint
from relectra.errors import ConfigError

TINY = """
vocab_size = 120
d_model = 8
n_heads = 2
n_layers = 1
d_ffn = 16
max_seq_len = 32
chunk_size = 8
n_hash_rounds = 1
total_steps = 20
warmup_steps = 2
phase_switch_step = 14
segment_len = 32
eval_every = 5
eval_docs = 4
ner_max_len = 32
"""


@pytest.fixture
def toy_corpus(tmp_path):
    d = tmp_path / "corpus"
    d.mkdir()
    for i, doc in enumerate(synthetic.toy_corpus(40, seed=1)):
        (d / f"{i:03d}.txt").write_text(doc, encoding="utf-8")
    return d


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY, encoding="utf-8")
    return p


# -- config ---------------------------------------------------------------------------

def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("", encoding="utf-8")
    cfg = parse_config(p)
    assert (cfg.mask_prob, cfg.vocab_size, cfg.total_steps) == (0.15, 30_522, 120_000)
    assert cfg == RunConfig()


def test_out_of_range_value_names_key():
    with pytest.raises(ConfigError) as e:
        parse_config_text("mask_prob = 1.5")
    assert e.value.key == "mask_prob" and "mask_prob" in str(e.value)


def test_warmup_beyond_total_is_invariant_error():
    with pytest.raises(ConfigError) as e:
        parse_config_text("warmup_steps = 200000")
    assert e.value.key == "warmup_steps"


def test_unknown_key_and_bad_type():
    with pytest.raises(ConfigError) as e:
        parse_config_text("colour = red")
    assert e.value.key == "colour"
    with pytest.raises(ConfigError) as e:
        parse_config_text("d_model = wide")
    assert e.value.key == "d_model"


def test_value_coercion():
    cfg = parse_config_text("n_buckets = 8\ntie_embeddings = no\nlr_phase1 = 2e-5\ntotal_steps = 1.2e5  # sci")
    assert (cfg.n_buckets, cfg.tie_embeddings, cfg.lr_phase1, cfg.total_steps) == (8, False, 2e-5, 120_000)
    assert parse_config_text("n_buckets = none").n_buckets is None


def test_snapshot_round_trips():
    cfg = dataclasses.replace(RunConfig(), n_buckets=16, lr_phase2=3.5e-7, manifest="m.txt", seed=9)
    assert parse_config_text(cfg.snapshot()) == cfg


# -- CLI ------------------------------------------------------------------------------

def test_unknown_subcommand_exits_1(capsys):
    assert run(["frobnicate"]) == 1
    assert run([]) == 1


def test_bad_config_exits_2(tmp_path, toy_corpus):
    bad = tmp_path / "bad.cfg"
    bad.write_text("mask_prob = 1.5\n", encoding="utf-8")
    assert run(["pretrain", "--config", str(bad), "--corpus-dir", str(toy_corpus), "--out", str(tmp_path / "o")]) == 2


def test_manifest_with_missing_path_exits_2(tmp_path, toy_corpus, tiny_config):
    (toy_corpus / "manifest.txt").write_text("name = gone\ndomain = legal\npath = missing_dir\n", encoding="utf-8")
    assert run(["pretrain", "--config", str(tiny_config), "--corpus-dir", str(toy_corpus),
                "--out", str(tmp_path / "o")]) == 2


def test_pretrain_writes_metrics_and_snapshot_reproduces_bitwise(tmp_path, toy_corpus, tiny_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["pretrain", "--config", str(tiny_config), "--corpus-dir", str(toy_corpus), "--out", str(a)]) == 0
    lines = (a / "metrics.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) >= 2
    snapshot = a / "effective_config.txt"
    assert parse_config(snapshot) == parse_config(tiny_config)
    # rerunning from the snapshot alone gives identical bytes
    assert run(["pretrain", "--config", str(snapshot), "--corpus-dir", str(toy_corpus), "--out", str(b)]) == 0
    for name in ("metrics.csv", "checkpoint.rlct", "vocab.txt", "effective_config.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_resume_from_cli_matches_full_run(tmp_path, toy_corpus, tiny_config, monkeypatch):
    full, part = tmp_path / "full", tmp_path / "part"
    assert run(["pretrain", "--config", str(tiny_config), "--corpus-dir", str(toy_corpus), "--out", str(full)]) == 0
    half = tmp_path / "half.cfg"
    half.write_text(TINY + "checkpoint_every = 10\n", encoding="utf-8")
    saved = {}
    real_save = Checkpoint.save

    def keep(self, path):
        real_save(self, path)
        saved.setdefault(self.step, (tmp_path / f"step{self.step}.rlct"))
        real_save(self, saved[self.step])

    monkeypatch.setattr(Checkpoint, "save", keep)
    assert run(["pretrain", "--config", str(half), "--corpus-dir", str(toy_corpus), "--out", str(part)]) == 0
    monkeypatch.setattr(Checkpoint, "save", real_save)
    resumed = tmp_path / "resumed"
    assert run(["pretrain", "--config", str(tiny_config), "--corpus-dir", str(toy_corpus), "--out", str(resumed),
                "--vocab", str(part / "vocab.txt"), "--resume", str(saved[10])]) == 0
    a = load_records(full / "checkpoint.rlct")
    b = load_records(resumed / "checkpoint.rlct")
    assert a.keys() == b.keys()
    for k in a:
        assert a[k].tobytes() == b[k].tobytes(), k


def test_inspect_checkpoint(tmp_path, toy_corpus, tiny_config, capsys):
    out = tmp_path / "o"
    assert run(["pretrain", "--config", str(tiny_config), "--corpus-dir", str(toy_corpus), "--out", str(out)]) == 0
    capsys.readouterr()
    assert run(["inspect-checkpoint", "--checkpoint", str(out / "checkpoint.rlct")]) == 0
    assert capsys.readouterr().out.startswith("step=20 ")


def test_train_and_eval_tokenizer(tmp_path, toy_corpus, capsys):
    vocab = tmp_path / "v.txt"
    assert run(["train-tokenizer", "--corpus", str(toy_corpus), "--vocab-size", "200", "--out", str(vocab)]) == 0
    assert run(["eval-tokenizer", "--vocab", str(vocab), "--text", str(toy_corpus)]) == 0
    assert "total_errors=" in capsys.readouterr().out


def test_missing_input_exits_2(tmp_path):
    assert run(["train-tokenizer", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "v")]) == 2


def test_log_level_from_environment(tmp_path, toy_corpus, tiny_config):
    cmd = [sys.executable, "-m", "relectra.cli", "pretrain", "--config", str(tiny_config),
           "--corpus-dir", str(toy_corpus), "--out", str(tmp_path / "o")]
    quiet = subprocess.run(cmd, capture_output=True, text=True, env={"RELECTRA_LOG": "error", "PATH": ""})
    loud = subprocess.run(cmd, capture_output=True, text=True, env={"RELECTRA_LOG": "info", "PATH": ""})
    assert quiet.returncode == loud.returncode == 0
    assert quiet.stderr == "" and "step=" in loud.stderr
    assert quiet.stdout == loud.stdout
