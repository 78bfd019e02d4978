import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcnmt import corpus as C

FIGURE1 = """\
1\tJohn\t2\tSBJ\t_\tA0
2\tgave\t0\troot\tY\t_
3\this\t4\tNMOD\t_\t_
4\twife\t2\tOBJ\t_\tA2
5\ta\t6\tNMOD\t_\t_
6\tpresent\t2\tOBJ\t_\tA1
"""


def test_ingest_figure1_semantic_edges():
    (sent,) = C.ingest_conll(FIGURE1)
    assert sent.tokens == ["John", "gave", "his", "wife", "a", "present"]
    assert set(sent.sem_edges) == {(1, 0, "A0"), (1, 3, "A2"), (1, 5, "A1")}
    assert (1, 0, "SBJ") in sent.syn_edges
    # root row produces no syntactic edge
    assert all(v != 1 for _, v, _ in sent.syn_edges)


def test_ingest_single_token_no_predicate():
    (sent,) = C.ingest_conll("1\thello\t0\troot\t_\n")
    assert sent.tokens == ["hello"] and sent.sem_edges == []


def test_ingest_head_out_of_range():
    text = "1\ta\t7\tX\t_\n2\tb\t1\tY\t_\n3\tc\t1\tY\t_\n4\td\t1\tY\t_\n5\te\t1\tY\t_\n"
    with pytest.raises(C.CorpusError, match="line 1"):
        C.ingest_conll(text)


def test_ingest_ragged_columns():
    with pytest.raises(C.CorpusError, match="ragged"):
        C.ingest_conll("1\ta\t0\troot\t_\n2\tb\t1\tX\t_\textra\n")


def test_ingest_rejects_self_loop_head():
    with pytest.raises(C.CorpusError, match="self-referential"):
        C.ingest_conll("1\ta\t1\tX\t_\n")


def test_conll_roundtrip():
    sentences = C.ingest_conll(FIGURE1)
    again = C.ingest_conll(C.serialize_conll(sentences))
    assert again == sentences


def test_roundtrip_multi_predicate():
    sent = C.AnnotatedSentence(
        tokens=["a", "b", "c", "d"],
        sem_edges=[(1, 0, "A0"), (3, 2, "A1"), (1, 2, "A2")],
        syn_edges=[(1, 0, "nsubj"), (1, 3, "obj"), (3, 2, "amod")],
    )
    (again,) = C.ingest_conll(C.serialize_conll([sent]))
    assert again.tokens == sent.tokens
    assert set(again.sem_edges) == set(sent.sem_edges)
    assert set(again.syn_edges) == set(sent.syn_edges)


def test_build_vocab_min_count_excludes():
    corpus = [["cat"] * 3 + ["dog"] * 4]
    vocab = C.build_vocab(corpus, min_count=4)
    assert vocab.id("dog") > C.EOS
    assert vocab.id("cat") == C.UNK  # frequency 3 is not "higher than three"


def test_build_vocab_empty_corpus():
    vocab = C.build_vocab([], min_count=1)
    assert len(vocab) == 4
    assert tuple(vocab.id_to_token) == C.SPECIALS


def test_build_vocab_hand_tally_order():
    sentences = [
        "the cat sat on the mat".split(),
        "the dog sat".split(),
        "a cat ran".split(),
        "the mat".split(),
        "dogs bark".split(),
        "cats and dogs".split(),
        "on the mat again".split(),
        "a dog and a cat".split(),
        "sat sat sat".split(),
        "mat".split(),
    ]
    vocab = C.build_vocab(sentences, min_count=2)
    # hand tally: sat=5, the=5, mat=4, a=3, cat=3, and=2, dog=2, dogs=2, on=2
    expected = ["sat", "the", "mat", "a", "cat", "and", "dog", "dogs", "on"]
    assert vocab.id_to_token[4:] == expected
    assert vocab.id("bark") == C.UNK


def test_vocab_file_roundtrip(tmp_path):
    vocab = C.build_vocab([["x", "y", "x"]], min_count=1)
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    loaded = C.Vocabulary.load(path)
    assert loaded.id_to_token == vocab.id_to_token


def test_learn_bpe_zero_merges_is_character_level():
    model = C.learn_bpe([["abc"]], num_merges=0)
    assert model.merges == []
    assert C.apply_bpe(model, "abc") == ["a@@", "b@@", "c"]


def test_learn_bpe_first_merge_hand_count():
    # aaab -> a a a b</w> (two "a a"), aab -> a a b</w> (one more): (a, a) wins
    model = C.learn_bpe([["aaab", "aab"]], num_merges=1)
    assert model.merges[0] == ("a", "a")


def test_learn_bpe_tie_breaks_lexicographically():
    model = C.learn_bpe([["ab"], ["cd"]], num_merges=1)
    assert model.merges[0] == ("a", "b</w>")


def test_apply_bpe_full_word_unit():
    model = C.learn_bpe([["hello"] * 10], num_merges=10)
    assert C.apply_bpe(model, "hello") == ["hello"]


def test_apply_bpe_unseen_token_decomposes_to_characters():
    model = C.learn_bpe([["hello"] * 10], num_merges=10)
    assert C.apply_bpe(model, "xyz") == ["x@@", "y@@", "z"]


def test_apply_bpe_manual_merge_replay():
    # corpus: "banana" x3 = [b a n a n a</w>]. hand replay:
    # round1: (a,n)=6 wins -> [b an an a</w>]
    # round2: three-way tie at 3; lexicographic min is (an, a</w>) -> [b an ana</w>]
    # round3: tie at 3; min is (an, ana</w>) -> [b anana</w>]
    model = C.learn_bpe([["banana"] * 3], num_merges=3)
    assert model.merges == [("a", "n"), ("an", "a</w>"), ("an", "ana</w>")]
    assert C.apply_bpe(model, "banana") == ["b@@", "anana"]


@given(st.lists(st.text(
    alphabet=st.characters(whitelist_categories=("Ll", "Lu", "Nd")),
    min_size=1, max_size=8), min_size=1, max_size=6))
@settings(max_examples=60, deadline=None)
def test_bpe_inverse_concatenation_property(tokens):
    model = C.learn_bpe([tokens], num_merges=10)
    for tok in tokens:
        pieces = C.apply_bpe(model, tok)
        assert all(pieces)
        assert C.rejoin_bpe(pieces) == [tok]


def test_bpe_file_roundtrip(tmp_path):
    model = C.learn_bpe([["banana", "bandana"]], num_merges=5)
    path = tmp_path / "bpe.txt"
    model.save(path)
    assert C.BpeModel.load(path).merges == model.merges


def test_label_vocab_folds_rare_labels():
    vocab = C.build_label_vocab([[(0, 1, "A0"), (0, 2, "A0"), (0, 3, "AM-DIR")]])
    assert vocab.id("A0") != 0
    assert vocab.id("AM-DIR") == 0  # count 1 < 2 folds into UNK
    assert vocab.id("never-seen") == 0


def _sentences():
    s1 = C.AnnotatedSentence(tokens=["a", "b", "c"],
                             sem_edges=[(1, 0, "A0")], syn_edges=[(1, 2, "obj")])
    s2 = C.AnnotatedSentence(tokens=["d", "e", "f", "g", "h"],
                             sem_edges=[(0, 4, "A1")], syn_edges=[])
    return s1, s2


def test_make_batch_single_sentence_no_padding():
    s1, _ = _sentences()
    vocab = C.build_vocab([s1.tokens], min_count=1)
    batch = C.make_batch([(s1, ["x"])], vocab, vocab)
    assert batch.src_mask.all()
    assert (batch.src != C.PAD).all()


def test_make_batch_pads_shorter_and_keeps_edges():
    s1, s2 = _sentences()
    vocab = C.build_vocab([s1.tokens, s2.tokens], min_count=1)
    batch = C.make_batch([(s1, ["x"]), (s2, ["y", "z"])], vocab, vocab)
    assert batch.src.shape == (2, 5)
    assert list(batch.src_len) == [3, 5]
    assert not batch.src_mask[0, 3:].any()
    assert batch.sem_edges[0] == [(1, 0, "A0")]
    # every edge endpoint below true length
    for i, edges in enumerate(batch.sem_edges + batch.syn_edges):
        n = batch.src_len[i % 2]
        assert all(u < n and v < n for u, v, _ in edges)


def test_make_batch_hand_mapped_ids():
    s1, _ = _sentences()
    src_vocab = C.build_vocab([s1.tokens], min_count=1)
    tgt_vocab = C.build_vocab([["x", "y"]], min_count=1)
    batch = C.make_batch([(s1, ["x", "zzz"])], src_vocab, tgt_vocab)
    expected_src = [src_vocab.id(t) for t in s1.tokens]
    assert list(batch.src[0]) == expected_src
    assert list(batch.tgt[0]) == [C.BOS, tgt_vocab.id("x"), C.UNK, C.EOS]


def test_make_batch_rejects_overlong_sentence():
    s1, _ = _sentences()
    vocab = C.build_vocab([s1.tokens], min_count=1)
    with pytest.raises(C.CorpusError, match="exceeds"):
        C.make_batch([(s1, ["x"])], vocab, vocab, max_len=2)


def test_make_batch_empty_list():
    with pytest.raises(ValueError):
        C.make_batch([], None, None)
