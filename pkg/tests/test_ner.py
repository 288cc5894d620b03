from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import prf_by_hand
from relectra.errors import AnnotationError, ConfigError, CoverageError, DataError
from relectra.ner import (DecodeReport, EntitySpan, NerExample, NerTagger, Window, WordExample, WordList,
                          auto_annotate, bio_decode, bio_encode, chunk_with_stride, edit_distance, evaluate_ner,
                          finetune, merge_window_predictions, read_conll, read_wordlists, to_subwords,
                          word_example, write_conll, write_wordlists)
from relectra.reformer import ReformerConfig, init_params
from relectra.tokenizer import TokenSequence, decode, encode, train_bpe

S = EntitySpan


# -- BIO ------------------------------------------------------------------------------

def test_encode_examples():
    assert bio_encode([], 3) == ["O", "O", "O"]
    assert bio_encode([S("PLT", 0, 2), S("DEF", 3, 4)], 4) == ["B-PLT", "I-PLT", "O", "B-DEF"]


def test_encode_overlap_is_error():
    with pytest.raises(AnnotationError):
        bio_encode([S("PLT", 0, 3), S("DEF", 2, 4)], 5)


def test_decode_examples():
    assert bio_decode(["O", "O"]) == []
    assert bio_decode(["B-DEF", "I-DEF", "I-DEF"]) == [S("DEF", 0, 3)]


def test_decode_repairs_orphan():
    rep = DecodeReport()
    assert bio_decode(["I-PLT"], report=rep) == [S("PLT", 0, 1)]
    assert rep.repairs == 1
    with pytest.raises(AnnotationError):
        bio_decode(["I-PLT"], strict=True)


def test_adjacent_same_label_spans_stay_apart():
    assert bio_decode(["B-PLT", "B-PLT", "I-PLT"]) == [S("PLT", 0, 1), S("PLT", 1, 3)]


@st.composite
def span_sets(draw):
    length = draw(st.integers(0, 30))
    cuts = sorted(draw(st.sets(st.integers(0, length), max_size=12)))
    spans = []
    for a, b in zip(cuts[::2], cuts[1::2]):
        if a < b and draw(st.booleans()):
            spans.append(S(draw(st.sampled_from(["PLT", "DEF", "TYPE", "PROB"])), a, b))
    return spans, length


@given(span_sets())
def test_bio_round_trip(case):
    spans, length = case
    assert bio_decode(bio_encode(spans, length)) == spans


# -- auto-annotation ------------------------------------------------------------------

TYPES = [WordList("slip and fall", ["slip and fall"]), WordList("dog bite", ["dog bite", "animal attack"])]


def test_absent_plaintiff():
    assert auto_annotate("nothing here", (["John Smith"], []), []) == []


def test_exact_party_match():
    spans = auto_annotate("yesterday John Smith slipped on ice", (["John Smith"], []), [])
    assert spans == [S("PLT", 1, 3)]


def test_every_occurrence_matched_case_insensitively():
    spans = auto_annotate("Acme Corp denied it . ACME CORP , again", ([], ["Acme Corp"]), [])
    assert spans == [S("DEF", 0, 2), S("DEF", 5, 7)]


def test_fuzzy_phrase():
    text = "this was a slipp and fall case"
    assert auto_annotate(text, ([], []), TYPES, max_edit=1) == [S("TYPE", 3, 6)]
    assert auto_annotate(text, ([], []), TYPES, max_edit=0) == []


def test_longest_match_wins():
    lists = [WordList("a", ["dog"]), WordList("b", ["dog bite"])]
    assert auto_annotate("the dog bite", ([], []), lists) == [S("TYPE", 1, 3)]


def test_token_level_spans():
    vocab = train_bpe("john smith slipped " * 5, vocab_size=40)
    spans = auto_annotate("john smith slipped", (["John Smith"], []), [], vocab=vocab)
    assert len(spans) == 1 and spans[0].label == "PLT" and spans[0].start == 0


def test_edit_distance():
    assert edit_distance("kitten", "sitting") == 3
    assert edit_distance("", "abc") == 3
    assert edit_distance("slipp", "slip") == 1


WORDS = ["dog", "dgo", "bite", "bit", "slip", "and", "fall", "fal", "john", "smith", "the"]


@given(st.lists(st.sampled_from(WORDS), max_size=25))
def test_max_edit_zero_is_subset(words):
    text = " ".join(words)
    lists = [WordList("x", ["dog bite", "slip and fall"]), WordList("y", ["smith"])]
    parties = (["john smith"], ["the dog"])
    strict = set(auto_annotate(text, parties, lists, max_edit=0))
    loose = set(auto_annotate(text, parties, lists, max_edit=1))
    assert strict <= loose


def test_wordlist_file_round_trip(tmp_path):
    p = tmp_path / "lists.txt"
    write_wordlists(TYPES, p)
    assert read_wordlists(p) == TYPES


def test_wordlist_conflict():
    p_lists = [WordList("a", ["dog bite"]), WordList("b", ["Dog  Bite"])]
    from relectra.ner import check_wordlists
    with pytest.raises(AnnotationError):
        check_wordlists(p_lists)


# -- data files and alignment ---------------------------------------------------------------

def test_conll_round_trip(tmp_path):
    exs = [WordExample(["John", "Smith", "sued"], ["B-PLT", "I-PLT", "O"]), WordExample(["x"], ["O"])]
    p = tmp_path / "d.conll"
    write_conll(exs, p)
    back = read_conll(p)
    assert [(e.words, e.tags) for e in back] == [(e.words, e.tags) for e in exs]


def test_conll_rejects_malformed(tmp_path):
    p = tmp_path / "d.conll"
    p.write_text("John B-PLT\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_conll(p)


def test_word_example_from_char_spans():
    ex = word_example("plaintiff John Smith sued", [("PLT", 10, 20)])
    assert ex.tags == ["O", "B-PLT", "I-PLT", "O"]


def test_subwords_first_piece_keeps_tag():
    vocab = train_bpe("aa bb", vocab_size=30)
    ex = to_subwords(WordExample(["abab", "aa"], ["B-PLT", "O"]), vocab)
    n = len(encode("abab", vocab))
    assert n > 1
    assert ex.tags == ["B-PLT"] + ["I-PLT"] * (n - 1) + ["O"] * (len(ex.tags) - n)
    assert decode(ex.tokens.ids, vocab) == "abab aa"


# -- windows --------------------------------------------------------------------------

def test_single_window_when_short():
    assert chunk_with_stride(7, 8, 4) == [Window(0, 7)]


def test_stride_enumeration():
    assert chunk_with_stride(10, 4, 2) == [Window(0, 4), Window(2, 6), Window(4, 8), Window(6, 10)]


@pytest.mark.parametrize("stride", [0, 4, 9])
def test_bad_stride(stride):
    with pytest.raises(ConfigError):
        chunk_with_stride(10, 4, stride)


def test_merge_single_window_unchanged():
    pred = np.array([3, 1, 4, 1, 5])
    assert merge_window_predictions([(Window(0, 5), pred)]).tolist() == pred.tolist()


def test_merge_prefers_deeper_window():
    wins = chunk_with_stride(10, 4, 2)
    preds = [(w, np.full(w.end - w.start, k)) for k, w in enumerate(wins)]
    out = merge_window_predictions(preds, 10)
    # token 3 is on the edge of [0,4) and one step inside [2,6)
    assert out[3] == 1
    # token 4 sits one step inside [2,6) but on the edge of [4,8)
    assert out[4] == 1
    assert out[0] == 0 and out[9] == 3


def test_merge_agreement_preserved():
    wins = chunk_with_stride(10, 4, 2)
    assert merge_window_predictions([(w, np.full(w.end - w.start, 7)) for w in wins], 10).tolist() == [7] * 10


def test_merge_gap_is_coverage_error():
    with pytest.raises(CoverageError):
        merge_window_predictions([(Window(0, 3), np.zeros(3)), (Window(5, 8), np.zeros(3))], 8)


@given(st.integers(1, 300), st.integers(2, 64), st.data())
def test_windows_cover_and_merge_assigns_once(length, max_len, data):
    stride = data.draw(st.integers(1, max_len - 1))
    wins = chunk_with_stride(length, max_len, stride)
    assert wins[0].start == 0 and wins[-1].end == length
    for a, b in zip(wins, wins[1:]):
        assert b.start == a.start + stride and b.start < a.end
    assert all(w.end - w.start <= max_len for w in wins)
    # each window predicts its own index; every token gets exactly one source
    out = merge_window_predictions([(w, np.full(w.end - w.start, k)) for k, w in enumerate(wins)], length)
    assert out.shape == (length,)
    for p in range(length):
        assert wins[out[p]].start <= p < wins[out[p]].end


# -- metrics --------------------------------------------------------------------------

def test_perfect_predictions():
    gold = [[S("PLT", 0, 2)], [S("DEF", 1, 3), S("TYPE", 4, 6)]]
    r = evaluate_ner(gold, gold)
    assert (r.overall.precision, r.overall.recall, r.overall.f1) == (1.0, 1.0, 1.0)


def test_partial_example():
    r = evaluate_ner([[S("PLT", 0, 2)]], [[S("PLT", 0, 2), S("DEF", 3, 4)]])
    assert r.overall.precision == 1.0 and r.overall.recall == 0.5
    assert r.overall.f1 == pytest.approx(2 / 3, abs=1e-15)


def test_no_predictions():
    r = evaluate_ner([[]], [[S("PLT", 0, 2)]])
    assert (r.overall.precision, r.overall.recall, r.overall.f1) == (0.0, 0.0, 0.0)


# ten examples scored by hand; each line notes what the pair contributes
HAND_PRED = [
    [S("PLT", 0, 2)],                                   # PLT hit, DEF missed
    [S("TYPE", 5, 8)],                                  # TYPE hit
    [S("PLT", 1, 2)],                                   # PLT boundary wrong
    [S("DEF", 0, 1)],                                   # spurious DEF
    [S("PLT", 2, 4)],                                   # label wrong: spurious PLT, missed DEF
    [S("PROB", 0, 3), S("PROB", 5, 6)],                 # two PROB hits
    [],                                                 # TYPE missed
    [S("PLT", 0, 1), S("DEF", 2, 3), S("TYPE", 4, 5)],  # PLT and DEF hits, spurious TYPE
    [],                                                 # nothing either side
    [S("PROB", 3, 4)],                                  # PROB boundary wrong
]
HAND_GOLD = [
    [S("PLT", 0, 2), S("DEF", 3, 4)],
    [S("TYPE", 5, 8)],
    [S("PLT", 1, 3)],
    [],
    [S("DEF", 2, 4)],
    [S("PROB", 0, 3), S("PROB", 5, 6)],
    [S("TYPE", 0, 1)],
    [S("PLT", 0, 1), S("DEF", 2, 3)],
    [],
    [S("PROB", 3, 5)],
]
# label: (correct, predicted, gold)
HAND_COUNTS = {"PLT": (2, 4, 3), "DEF": (1, 2, 3), "TYPE": (1, 2, 2), "PROB": (2, 3, 3)}
HAND_F1 = {"PLT": Fraction(4, 7), "DEF": Fraction(2, 5), "TYPE": Fraction(1, 2), "PROB": Fraction(2, 3)}


def _check_hand_oracle(report):
    for lab, (c, p, g) in HAND_COUNTS.items():
        s = report.per_label[lab]
        assert (s.correct, s.predicted, s.gold) == (c, p, g)
        assert s.precision == pytest.approx(float(Fraction(c, p)), abs=1e-15)
        assert s.recall == pytest.approx(float(Fraction(c, g)), abs=1e-15)
        assert s.f1 == pytest.approx(float(HAND_F1[lab]), abs=1e-15)
    o = report.overall
    assert (o.correct, o.predicted, o.gold) == (6, 11, 11)
    assert o.precision == o.recall == pytest.approx(6 / 11, abs=1e-15)
    assert o.f1 == pytest.approx(6 / 11, abs=1e-15)


def test_hand_counted_ten_examples():
    _check_hand_oracle(evaluate_ner(HAND_PRED, HAND_GOLD))


span_lists = st.lists(st.lists(st.builds(lambda lab, a, n: S(lab, a, a + n), st.sampled_from(["PLT", "DEF"]),
                                         st.integers(0, 6), st.integers(1, 3)), max_size=4), min_size=1, max_size=6)


@given(span_lists, st.data())
def test_metrics_match_oracle_and_are_symmetric(pred, data):
    gold = data.draw(st.lists(st.lists(st.builds(lambda lab, a, n: S(lab, a, a + n), st.sampled_from(["PLT", "DEF"]),
                                                 st.integers(0, 6), st.integers(1, 3)), max_size=4),
                              min_size=len(pred), max_size=len(pred)))
    r = evaluate_ner(pred, gold)
    p, rec, f = prf_by_hand([set(x) for x in pred], [set(x) for x in gold])
    assert (r.overall.precision, r.overall.recall) == pytest.approx((p, rec), abs=1e-12)
    assert r.overall.f1 == pytest.approx(f, abs=1e-12)
    swapped = evaluate_ner(gold, pred)
    assert swapped.overall.precision == r.overall.recall
    assert swapped.overall.recall == r.overall.precision
    assert swapped.overall.f1 == pytest.approx(r.overall.f1, abs=1e-15)


def test_metrics_length_mismatch():
    with pytest.raises(AnnotationError):
        evaluate_ner([[]], [[], []])


# -- fine-tuning ------------------------------------------------------------------------

TINY = ReformerConfig(vocab_size=12, d_model=8, n_heads=2, n_layers=1, d_ffn=16, max_seq_len=16, chunk_size=8,
                      n_hash_rounds=1, attention_dropout=0.0, hidden_dropout=0.0, seed=1)


def _tagger(seed=0):
    body = {k: t.data for k, t in init_params(TINY, np.random.default_rng(5)).items()}
    return NerTagger.from_body(TINY, body, ("PLT", "DEF"), seed)


def _examples(n, seed):
    # id 5 is always a one-token plaintiff, id 6 opens a two-token defendant
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        ids = rng.integers(7, 12, 10)
        ids[rng.integers(0, 4)] = 5
        j = rng.integers(5, 9)
        ids[j] = 6
        spans = sorted(bio_decode(["B-PLT" if x == 5 else "O" for x in ids]) + [S("DEF", int(j), int(j) + 2)])
        out.append(NerExample(TokenSequence(ids.tolist(), [(k, k + 1) for k in range(10)]),
                              bio_encode(spans, 10), f"ex{i}"))
    return out


def test_zero_epochs_returns_initial_state():
    t = _tagger()
    before = t.checkpoint()
    res = finetune(t, _examples(4, 0), _examples(2, 1), epochs=0)
    assert res.checkpoint.equals(before) and res.best_epoch == 0


def test_finetune_deterministic_and_learns():
    train, dev = _examples(40, 2), _examples(10, 3)
    a = finetune(_tagger(), train, dev, epochs=3, lr=1e-2, seed=4, max_len=16)
    b = finetune(_tagger(), train, dev, epochs=3, lr=1e-2, seed=4, max_len=16)
    assert a.checkpoint.equals(b.checkpoint)
    assert a.loss_history == b.loss_history
    assert a.loss_history[-1] < a.loss_history[0]


def test_best_checkpoint_is_a_snapshot():
    train, dev = _examples(20, 2), _examples(5, 3)
    res = finetune(_tagger(), train, dev, epochs=2, lr=1e-2, seed=4, max_len=16)
    restored = NerTagger.from_checkpoint(res.checkpoint, TINY, ("PLT", "DEF"), 0)
    preds = [restored.predict_spans(ex.tokens.ids, 16) for ex in dev]
    assert evaluate_ner(preds, [ex.spans for ex in dev]).overall_f1 == pytest.approx(res.best_dev_f1)


def test_label_mismatch_is_config_error():
    bad = _examples(1, 0)
    bad[0].tags[0] = "B-PROB"
    with pytest.raises(ConfigError):
        finetune(_tagger(), bad, [], epochs=1)


def test_head_label_mismatch_on_load():
    ck = _tagger().checkpoint()
    with pytest.raises(ConfigError):
        NerTagger.from_checkpoint(ck, TINY, ("PLT", "DEF", "TYPE"), 0)


def test_long_input_one_prediction_per_token():
    t = _tagger()
    ids = np.random.default_rng(0).integers(0, 12, 50)
    for stride in (4, 8, 12):
        assert len(t.predict_tags(ids, max_len=16, stride=stride)) == 50
