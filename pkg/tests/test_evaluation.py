import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcnmt import cli
from gcnmt import config as CFG
from gcnmt import evaluation as E
from gcnmt.corpus import AnnotatedSentence, serialize_conll


def test_bleu_identical_corpus_is_100():
    hyps = [["the", "cat", "sat", "on", "the", "mat"],
            ["a", "dog", "ran", "home", "today"]]
    report = E.bleu(hyps, [list(h) for h in hyps])
    npt.assert_allclose(report.bleu, 100.0, atol=1e-9)
    assert report.brevity_penalty == 1.0
    assert report.precisions == [1.0] * 4


def test_bleu_empty_hypotheses_score_zero():
    report = E.bleu([[]], [["a", "b", "c", "d"]])
    assert report.bleu == 0.0 and report.brevity_penalty == 0.0


def test_bleu_clipping_hand_case():
    # "the the the" vs "the cat": unigram matches clip at 1 -> p1 = 1/3,
    # and no higher-order match, so the corpus score is zero
    report = E.bleu([["the", "the", "the"]], [["the", "cat"]])
    npt.assert_allclose(report.precisions[0], 1 / 3)
    assert report.bleu == 0.0


def test_bleu_full_hand_computation():
    hyp = ["the", "cat", "sat", "on", "a", "mat"]
    ref = ["the", "cat", "sat", "on", "the", "mat"]
    # matches: p1 = 6/6 clipped to 5/6 ("a" unmatched, second "the" clips),
    # p2 = 3/5 ("the cat", "cat sat", "sat on"), p3 = 2/4, p4 = 1/3
    report = E.bleu([hyp], [ref])
    npt.assert_allclose(report.precisions, [5 / 6, 3 / 5, 2 / 4, 1 / 3])
    expected = math.exp(sum(math.log(p) for p in
                            (5 / 6, 3 / 5, 2 / 4, 1 / 3)) / 4) * 100
    npt.assert_allclose(report.bleu, expected, rtol=1e-12)
    assert report.brevity_penalty == 1.0


def test_bleu_brevity_penalty_hand_case():
    hyp = ["a", "b", "c", "d"]
    ref = ["a", "b", "c", "d", "e"]
    report = E.bleu([hyp], [ref])
    npt.assert_allclose(report.brevity_penalty, math.exp(1 - 5 / 4), rtol=1e-12)


def test_bleu_corpus_level_not_mean_of_sentences():
    hyps = [["a", "b", "c", "d"], ["a", "x", "y", "z", "w"]]
    refs = [["a", "b", "c", "d"], ["a", "b", "y", "z", "w"]]
    corpus = E.bleu(hyps, refs).bleu
    per_sent = [E.bleu([h], [r]).bleu for h, r in zip(hyps, refs)]
    # pooled counts keep the second pair from zeroing out, unlike the
    # average of per-sentence scores
    assert corpus > np.mean(per_sent) + 1.0


def test_bleu_pair_permutation_invariance():
    hyps = [["a", "b", "c", "d"], ["e", "f", "g", "h", "i"]]
    refs = [["a", "b", "x", "d"], ["e", "f", "g", "h", "j"]]
    fwd = E.bleu(hyps, refs)
    rev = E.bleu(hyps[::-1], refs[::-1])
    npt.assert_allclose(fwd.bleu, rev.bleu, rtol=1e-12)


def test_bleu_invariant_under_token_relabeling():
    hyps = [["a", "b", "b", "c", "d"]]
    refs = [["a", "b", "c", "c", "d"]]
    table = {"a": "tok1", "b": "tok2", "c": "tok3", "d": "tok4"}
    relabeled = E.bleu([[table[t] for t in hyps[0]]],
                       [[table[t] for t in refs[0]]])
    npt.assert_allclose(E.bleu(hyps, refs).bleu, relabeled.bleu, rtol=1e-12)


def test_bleu_rewards_fixing_an_error():
    ref = [["the", "cat", "sat", "on", "the", "mat"]]
    worse = E.bleu([["the", "dog", "sat", "on", "a", "mat"]], ref).bleu
    better = E.bleu([["the", "cat", "sat", "on", "a", "mat"]], ref).bleu
    assert better > worse


def test_bleu_length_mismatch_and_empty_corpus_rejected():
    with pytest.raises(ValueError):
        E.bleu([["a"]], [["a"], ["b"]])
    with pytest.raises(ValueError):
        E.bleu([], [])


@given(st.lists(
    st.tuples(st.lists(st.sampled_from("abcde"), max_size=8),
              st.lists(st.sampled_from("abcde"), min_size=1, max_size=8)),
    min_size=1, max_size=5))
@settings(max_examples=60, deadline=None)
def test_bleu_bounded_property(pairs):
    hyps = [h for h, _ in pairs]
    refs = [r for _, r in pairs]
    report = E.bleu(hyps, refs)
    assert 0.0 <= report.bleu <= 100.0 + 1e-9
    assert all(0.0 <= p <= 1.0 for p in report.precisions)


def test_report_format_line():
    report = E.bleu([["a", "b", "c", "d"]], [["a", "b", "c", "d"]])
    line = report.format()
    assert line.startswith("BLEU = 100.00")
    assert "p1..p4=100.0/100.0/100.0/100.0" in line


def test_parse_config_roundtrip_and_comments():
    text = """
    # experiment
    encoder = cnn
    recipe = sem:2
    hidden_size = 16
    learning_rate = 0.001   # optimizer
    out_dir = /tmp/run1
    """
    exp, trn, paths = CFG.parse_config(text)
    assert exp.encoder == "cnn" and exp.recipe == "sem:2"
    assert exp.hidden_size == 16 and trn.learning_rate == 0.001
    assert paths.out_dir == "/tmp/run1"
    exp2, trn2, paths2 = CFG.parse_config(CFG.dump_config(exp, trn, paths))
    assert (exp2, trn2, paths2) == (exp, trn, paths)


def test_parse_config_rejects_unknown_key_with_line_number():
    with pytest.raises(CFG.ConfigError, match="line 2"):
        CFG.parse_config("encoder = birnn\nbogus_key = 3\n")


def test_parse_config_rejects_bad_value_and_missing_equals():
    with pytest.raises(CFG.ConfigError, match="bad value"):
        CFG.parse_config("epochs = many\n")
    with pytest.raises(CFG.ConfigError, match="key = value"):
        CFG.parse_config("just some words\n")


def test_recipe_parse_format_roundtrip():
    for text in ("none", "sem:1", "syn:3", "semsyn:2", "selfloop:1",
                 "syn:2+sem:1"):
        assert CFG.format_recipe(CFG.parse_recipe(text)) == text
    for bad in ("sem", "sem:0", "sem:4", "foo:1", "sem:x"):
        with pytest.raises(CFG.ConfigError):
            CFG.parse_recipe(bad)


def test_grid_paper_small_contents():
    assert CFG.GRIDS["paper-small"] == ["none", "sem:1", "syn:1", "syn:1+sem:1"]


def test_cli_score_identical_files(tmp_path, capsys):
    text = "the cat sat on the mat\na dog ran home today\n"
    hyp = tmp_path / "hyp.txt"
    ref = tmp_path / "ref.txt"
    hyp.write_text(text)
    ref.write_text(text)
    rc = cli.main(["score", "--hyp", str(hyp), "--ref", str(ref)])
    assert rc == 0
    assert capsys.readouterr().out.startswith("BLEU = 100.00")


def test_cli_score_missing_file_fails_cleanly(tmp_path, capsys):
    rc = cli.main(["score", "--hyp", str(tmp_path / "no.txt"),
                   "--ref", str(tmp_path / "no.txt")])
    assert rc == 1
    assert "gcnmt score:" in capsys.readouterr().err


def _write_tiny_dataset(tmp_path, n=20):
    rng = np.random.default_rng(0)
    words = ["w%d" % i for i in range(6)]
    sents, tgts = [], []
    for _ in range(n):
        toks = [words[i] for i in rng.choice(len(words), size=3, replace=False)]
        sents.append(AnnotatedSentence(
            tokens=toks, sem_edges=[(0, 1, "A0"), (0, 2, "A1")],
            syn_edges=[(0, 1, "sbj"), (1, 2, "obj")]))
        tgts.append(" ".join(toks) + "\n")
    conll = tmp_path / "train.conll"
    tgt = tmp_path / "train.tgt"
    conll.write_text(serialize_conll(sents))
    tgt.write_text("".join(tgts))
    return conll, tgt


def _tiny_flags(conll, tgt, out_dir):
    return ["--train-conll", str(conll), "--train-tgt", str(tgt),
            "--out-dir", str(out_dir), "--epochs", "2", "--batch-size", "5",
            "--bpe-merges", "0"]


def test_cli_preprocess_train_translate_score_pipeline(tmp_path, capsys):
    conll, tgt = _write_tiny_dataset(tmp_path)
    out = tmp_path / "run"
    base = _tiny_flags(conll, tgt, out)
    small = ["--config", str(tmp_path / "small.cfg")]
    (tmp_path / "small.cfg").write_text(
        "emb_size = 8\nhidden_size = 8\nattn_size = 8\nmin_count = 1\n"
        "max_decode_len = 5\nrecipe = sem:1\n")

    assert cli.main(["preprocess"] + small + base) == 0
    assert (out / "src_vocab.txt").exists()
    assert cli.main(["train"] + small + base) == 0
    assert (out / "best.npz").exists()

    hyp_path = tmp_path / "hyp.txt"
    rc = cli.main(["translate"] + small + base +
                  ["--checkpoint", str(out / "best.npz"),
                   "--input", str(conll), "--output", str(hyp_path)])
    assert rc == 0
    lines = hyp_path.read_text().split("\n")[:-1]
    assert len(lines) == 20

    capsys.readouterr()
    assert cli.main(["score", "--hyp", str(hyp_path), "--ref", str(tgt)]) == 0
    assert capsys.readouterr().out.startswith("BLEU = ")


def test_cli_translate_beam1_matches_greedy(tmp_path):
    conll, tgt = _write_tiny_dataset(tmp_path, n=10)
    out = tmp_path / "run"
    (tmp_path / "small.cfg").write_text(
        "emb_size = 8\nhidden_size = 8\nattn_size = 8\nmin_count = 1\n"
        "max_decode_len = 5\n")
    base = _tiny_flags(conll, tgt, out) + ["--config", str(tmp_path / "small.cfg")]
    assert cli.main(["train"] + base) == 0
    outs = {}
    for name, extra in (("greedy", ["--decode", "greedy"]),
                        ("beam", ["--decode", "beam", "--beam", "1"])):
        path = tmp_path / f"{name}.txt"
        rc = cli.main(["translate"] + base + extra +
                      ["--checkpoint", str(out / "best.npz"),
                       "--input", str(conll), "--output", str(path)])
        assert rc == 0
        outs[name] = path.read_text()
    assert outs["greedy"] == outs["beam"]


def test_cli_rejects_invalid_recipe(capsys):
    rc = cli.main(["train", "--recipe", "sem:9", "--train-conll", "x",
                   "--train-tgt", "y"])
    assert rc == 1
    assert "gcnmt train:" in capsys.readouterr().err


def test_run_experiment_single_cell(tmp_path):
    conll, tgt = _write_tiny_dataset(tmp_path, n=12)
    exp = CFG.ExperimentConfig(encoder="birnn", recipe="sem:1", emb_size=8,
                               hidden_size=8, attn_size=8, decode="greedy",
                               max_decode_len=5, bpe_merges=0)
    trn = CFG.TrainConfig(epochs=2, batch_size=6, min_count=1, rng_seed=3)
    paths = CFG.DataPaths(train_conll=str(conll), train_tgt=str(tgt),
                          out_dir=str(tmp_path / "cell"))
    summary = E.run_experiment(exp, trn, paths)
    assert summary.recipe == "sem:1"
    assert 0.0 <= summary.test_bleu <= 100.0
    assert (tmp_path / "cell" / "test.hyp.txt").exists()


def test_run_experiment_wraps_stage_errors(tmp_path):
    exp = CFG.ExperimentConfig()
    trn = CFG.TrainConfig(epochs=1)
    paths = CFG.DataPaths(train_conll=str(tmp_path / "missing.conll"),
                          train_tgt=str(tmp_path / "missing.tgt"),
                          out_dir=str(tmp_path / "x"))
    with pytest.raises(RuntimeError, match="during preprocess"):
        E.run_experiment(exp, trn, paths)


def test_run_grid_paper_small_produces_four_rows(tmp_path):
    conll, tgt = _write_tiny_dataset(tmp_path, n=12)
    exp = CFG.ExperimentConfig(emb_size=8, hidden_size=8, attn_size=8,
                               decode="greedy", max_decode_len=5, bpe_merges=0)
    trn = CFG.TrainConfig(epochs=1, batch_size=6, min_count=1)
    paths = CFG.DataPaths(train_conll=str(conll), train_tgt=str(tgt),
                          out_dir=str(tmp_path / "grid"))
    summaries = E.run_grid("paper-small", exp, trn, paths)
    assert [s.recipe for s in summaries] == CFG.GRIDS["paper-small"]
    assert len({s.out_dir for s in summaries}) == 4
    with pytest.raises(CFG.ConfigError):
        E.run_grid("nope", exp, trn, paths)
