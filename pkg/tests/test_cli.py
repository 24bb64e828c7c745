import os
import random

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from mesv.cli import RunConfig, main
from mesv.cli import formats
from mesv.cli.main import load_model, make_backend, save_model
from mesv.encoder import FeatureSequence, init_encoder
from mesv.errors import (CompatibilityError, ConfigError, EmptyModelError, FormatError, ParseError,
                         ReferentialIntegrityError)
from mesv.records import EmbeddingRecord, ScoredTrial, TrialPair

TINY = """\
# a few seconds end to end
train_speakers = 6
eval_speakers = 4
utts_per_speaker = 5
feat_dim = 5
min_frames = 14
max_frames = 20
eval_enroll_counts = 1,2,3
tdnn_channels = 8
embedding_dim = 8
sdsa_heads = 2
ffsa_heads = 2
ffsa_hidden = 8
pretrain_epochs = 2
pretrain_batch = 8
finetune_epochs = 1
batch_speakers = 3
batch_utterances = 3
nplda_epochs = 1
"""


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


# embedding files ----------------------------------------------------------------

def test_embedding_round_trip(tmp_path, rng):
    recs = [EmbeddingRecord("spké", f"u{i}", rng.normal(size=4).astype(np.float32)) for i in range(3)]
    path = tmp_path / "e.emb"
    formats.write_embeddings(path, recs)
    back = formats.read_embeddings(path, expected_dim=4)
    assert [(r.speaker_id, r.utterance_id) for r in back] == [(r.speaker_id, r.utterance_id) for r in recs]
    for a, b in zip(recs, back):
        assert_array_equal(b.vector, a.vector.astype(np.float64))


def test_empty_embedding_file(tmp_path):
    path = tmp_path / "e.emb"
    formats.write_embeddings(path, [])
    assert path.read_bytes() == b"EMB1" + bytes(8)
    assert formats.read_embeddings(path) == []


def test_embedding_errors(tmp_path, rng):
    path = tmp_path / "e.emb"
    formats.write_embeddings(path, [EmbeddingRecord("a", "b", rng.normal(size=4))])
    with pytest.raises(FormatError):
        formats.read_embeddings(path, expected_dim=5)
    data = path.read_bytes()
    (tmp_path / "t.emb").write_bytes(data[:-1])
    with pytest.raises(FormatError):
        formats.read_embeddings(tmp_path / "t.emb")
    (tmp_path / "m.emb").write_bytes(b"EMB2" + data[4:])
    with pytest.raises(FormatError):
        formats.read_embeddings(tmp_path / "m.emb")
    (tmp_path / "x.emb").write_bytes(data + b"\0")
    with pytest.raises(FormatError):
        formats.read_embeddings(tmp_path / "x.emb")


def test_feature_round_trip(tmp_path, rng):
    seqs = [FeatureSequence(rng.normal(size=(3, n)).astype(np.float32), i, f"s{i}", f"u{i}", g)
            for i, (n, g) in enumerate([(5, 0), (9, None), (1, 2)])]
    formats.write_features(tmp_path / "f.fea", seqs)
    back = formats.read_features(tmp_path / "f.fea", expected_dim=3)
    for a, b in zip(seqs, back):
        assert_array_equal(b.frames, a.frames)
        assert (b.speaker_label, b.speaker_id, b.utterance_id, b.genre) == \
            (a.speaker_label, a.speaker_id, a.utterance_id, a.genre)


# trial and score files ----------------------------------------------------------

def test_trial_round_trip_and_single_enrollment(tmp_path):
    trials = [TrialPair(("a1",), "b1", 0), TrialPair(("a1", "a2", "a3"), "a4", 1)]
    formats.write_trials(tmp_path / "t.txt", trials)
    assert formats.read_trials(tmp_path / "t.txt") == trials
    assert formats.parse_trial_line("x\ty\t1", 1).num_enroll == 1


@pytest.mark.parametrize("line", ["a,a\tb\t1", "a\tb", "a\tb\t2", "a,\tb\t0", "a\t\t0"])
def test_trial_parse_errors_report_line(tmp_path, line):
    path = _write(tmp_path / "t.txt", "ok\tx\t0\n" + line + "\n")
    with pytest.raises(ParseError) as err:
        formats.read_trials(path)
    assert err.value.line == 2
    assert "line 2" in str(err.value)


def test_score_round_trip(tmp_path):
    scored = [ScoredTrial(TrialPair(("a",), "b", 1), 0.123456789123), ScoredTrial(TrialPair(("a",), "c", 0), -2e-7)]
    formats.write_scores(tmp_path / "s.txt", scored)
    assert (tmp_path / "s.txt").read_text().splitlines()[0] == "0\t0.123456789\t1"
    idx, s, y = formats.read_scores(tmp_path / "s.txt")
    assert_array_equal(idx, [0, 1])
    assert_array_equal(y, [1, 0])
    assert s[1] == -2e-7


def test_referential_integrity_lists_offenders():
    trials = [TrialPair((f"m{i}", "ok"), f"t{i}", 0) for i in range(7)]
    with pytest.raises(ReferentialIntegrityError) as err:
        formats.check_references(trials, {"ok"})
    assert err.value.missing[:3] == ["m0", "t0", "m1"]
    assert "(+4 more)" in str(err.value)
    with pytest.raises(ReferentialIntegrityError):
        formats.unique_index([EmbeddingRecord("a", "u", 0), EmbeddingRecord("b", "u", 0)])


# configuration ------------------------------------------------------------------

def test_config_parse_and_errors():
    cfg = RunConfig.parse("seed = 7  # comment\nuse_se = yes\n\nfinetune_lr = 1e-3\n")
    assert (cfg["seed"], cfg["use_se"], cfg["finetune_lr"]) == (7, True, 1e-3)
    assert RunConfig.parse(cfg.dump()).values == cfg.values
    with pytest.raises(ConfigError, match="<config>:2"):
        RunConfig.parse("seed = 1\nno_such_key = 3\n")
    with pytest.raises(ConfigError, match=":1"):
        RunConfig.parse("seed = abc")
    with pytest.raises(ConfigError):
        RunConfig.parse("just words")


def test_architecture_hash_tracks_shape_keys():
    a = RunConfig()
    b = RunConfig({"seed": 9, "finetune_lr": 0.5})
    c = RunConfig({"embedding_dim": 16})
    assert a.architecture_hash() == b.architecture_hash() != c.architecture_hash()


# model container ----------------------------------------------------------------

def test_model_save_load_bitwise(tmp_path):
    cfg = RunConfig.parse(TINY)
    from mesv.cli.main import encoder_config
    enc = init_encoder(encoder_config(cfg, 6), np.random.default_rng(0))
    save_model(tmp_path / "m.enkt", cfg, "cosine", enc, {})
    model = load_model(tmp_path / "m.enkt", cfg)
    assert model.kind == "cosine"
    for k, v in enc.items():
        assert model.encoder[k].data.tobytes() == v.data.tobytes()
    other = RunConfig.parse(TINY + "embedding_dim = 6\n")
    with pytest.raises(CompatibilityError):
        load_model(tmp_path / "m.enkt", other)
    raw = formats.read_model(tmp_path / "m.enkt")
    raw["encoder.fc1.bias"] = np.zeros(3)
    formats.write_model(tmp_path / "bad.enkt", raw)
    with pytest.raises(CompatibilityError):
        load_model(tmp_path / "bad.enkt", cfg)


def test_empty_model_fails_at_score_time(tmp_path):
    formats.write_model(tmp_path / "empty.enkt", {})
    assert (tmp_path / "empty.enkt").read_bytes() == b"ENKT" + bytes(4)
    model = load_model(tmp_path / "empty.enkt", RunConfig())
    with pytest.raises(EmptyModelError):
        make_backend(model, RunConfig())


# commands -----------------------------------------------------------------------

def test_usage_and_config_exit_codes(tmp_path, capsys):
    assert main([]) == 1
    assert main(["bogus", "--out", str(tmp_path)]) == 1
    assert main(["eval", "--out", str(tmp_path)]) == 1
    bad = _write(tmp_path / "bad.cfg", "not_a_key = 1\n")
    assert main(["gen-data", "--config", bad, "--out", str(tmp_path)]) == 1
    assert main(["eval", "--scores", str(tmp_path / "missing.txt"), "--out", str(tmp_path)]) == 2


def test_eval_on_separable_scores(tmp_path, capsys):
    scored = [ScoredTrial(TrialPair(("a",), f"t{i}", int(i < 5)), 1.0 + i if i < 5 else -float(i))
              for i in range(10)]
    formats.write_scores(tmp_path / "s.txt", scored)
    assert main(["eval", "--scores", str(tmp_path / "s.txt"), "--out", str(tmp_path)]) == 0
    report = (tmp_path / "report.txt").read_text()
    assert "EER(%)\t0.0000" in report
    assert "minDCF(0.01)\t0.0000" in report
    assert main(["det", "--scores", str(tmp_path / "s.txt"), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "det.csv").read_text().splitlines()
    assert lines[0] == "p_fa,p_miss" and lines[1] == "1,0" and lines[-1] == "0,1"


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = _write(root / "tiny.cfg", TINY)
    d = str(root)
    assert main(["gen-data", "--config", cfg, "--out", d]) == 0
    assert main(["pretrain", "--config", cfg, "--train", f"{d}/train.fea", "--out", d]) == 0
    return root, cfg


@pytest.mark.parametrize("backend", ["cosine", "attention", "plda", "nplda"])
def test_full_pipeline(pipeline_run, backend):
    root, cfg = pipeline_run
    d = str(root / backend)
    os.makedirs(d, exist_ok=True)
    assert main(["finetune", "--config", cfg, "--train", f"{root}/train.fea",
                 "--encoder", f"{root}/encoder.enkt", "--backend", backend, "--out", d]) == 0
    assert main(["score", "--config", cfg, "--model", f"{d}/model.enkt", "--trials",
                 f"{root}/trials.txt", "--features", f"{root}/eval.fea", "--out", d]) == 0
    assert main(["eval", "--config", cfg, "--scores", f"{d}/scores.txt", "--trials",
                 f"{root}/trials.txt", "--out", d]) == 0
    report = open(f"{d}/report.txt").read()
    assert "EER(%)" in report and "K\ttrials" in report and ">=5\t0" in report
    log = open(f"{d}/finetune.log").read().splitlines()
    assert log[0].startswith("# mesv finetune started")
    assert "embedding_dim = 8" in log


def test_score_shuffled_trials_match(pipeline_run, tmp_path):
    root, cfg = pipeline_run
    d = str(root / "shuffle")
    assert main(["finetune", "--config", cfg, "--train", f"{root}/train.fea",
                 "--encoder", f"{root}/encoder.enkt", "--backend", "attention", "--out", d]) == 0
    trials = formats.read_trials(f"{root}/trials.txt")
    order = list(range(len(trials)))
    random.Random(0).shuffle(order)
    formats.write_trials(tmp_path / "shuffled.txt", [trials[i] for i in order])
    args = ["score", "--config", cfg, "--model", f"{d}/model.enkt", "--features", f"{root}/eval.fea"]
    assert main(args + ["--trials", f"{root}/trials.txt", "--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--trials", str(tmp_path / "shuffled.txt"), "--out", str(tmp_path / "b")]) == 0
    _, plain, _ = formats.read_scores(tmp_path / "a" / "scores.txt")
    _, shuffled, _ = formats.read_scores(tmp_path / "b" / "scores.txt")
    restored = np.empty_like(shuffled)
    restored[order] = shuffled
    assert_array_equal(restored, plain)


def test_score_with_embeddings_and_missing_ids(pipeline_run, tmp_path):
    root, cfg = pipeline_run
    model = f"{root}/encoder.enkt"
    trials = formats.read_trials(f"{root}/trials.txt")
    ids = sorted({u for t in trials for u in t.enroll_ids + (t.test_id,)})
    recs = [EmbeddingRecord(u.split("-")[0], u, np.random.default_rng(i).normal(size=8))
            for i, u in enumerate(ids)]
    formats.write_embeddings(tmp_path / "e.emb", recs)
    base = ["score", "--config", cfg, "--model", model, "--trials", f"{root}/trials.txt"]
    assert main(base + ["--embeddings", str(tmp_path / "e.emb"), "--out", str(tmp_path)]) == 0
    formats.write_embeddings(tmp_path / "short.emb", recs[1:])
    assert main(base + ["--embeddings", str(tmp_path / "short.emb"), "--out", str(tmp_path)]) == 2
    assert main(base + ["--out", str(tmp_path)]) == 1
    formats.write_embeddings(tmp_path / "d4.emb", [EmbeddingRecord("a", "b", np.zeros(4))])
    assert main(base + ["--embeddings", str(tmp_path / "d4.emb"), "--out", str(tmp_path)]) == 2
