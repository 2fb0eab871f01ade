"""Sequence decoding: Viterbi, forward-backward, fusion, weight tuning."""

import math
import random

import numpy as np
import pytest

from dialact.corpus import Conversation, TagSet, Utterance
from dialact.discourse import GrammarVariant, train_discourse
from dialact.hmm import (CombinationWeights, LikelihoodTable,
                         brute_force_decode, combine_likelihoods,
                         dump_likelihoods, forward_backward, load_likelihoods,
                         tune_alpha_beta, viterbi_decode)


class StubBigram:
    """Hand-specified first-order chain over two labels, unit end term.

    ``start`` and ``trans`` are plain probabilities; the end scale lets a
    test pin a label-dependent end-of-conversation preference.
    """

    labels = ("S", "Q")
    order = 2

    def __init__(self, end=None):
        self.start = {"S": 0.5, "Q": 0.5}
        self.trans = {("S", "S"): 0.8, ("S", "Q"): 0.2,
                      ("Q", "S"): 0.6, ("Q", "Q"): 0.4}
        self.end = end or {}

    def transition_log_prob(self, history, event):
        label = event[0]
        if not history:
            return math.log(self.start[label])
        return math.log(self.trans[(history[-1][0], label)])

    def end_log_prob(self, history):
        if not self.end:
            return 0.0
        return math.log(self.end[history[-1][0]])


def two_state_table():
    return LikelihoodTable.from_rows(
        "c", ("S", "Q"), ("A", "B"),
        [{"S": math.log(0.1), "Q": math.log(0.3)},
         {"S": math.log(0.4), "Q": math.log(0.1)}])


def rand_instance(rng, n_labels, order, n_utts):
    labels = ("S", "Q", "B", "X")[:n_labels]
    tagset = TagSet(labels)
    convs = []
    for c in range(6):
        utts = tuple(Utterance(i, rng.choice("AB"), rng.choice(labels), ("w",))
                     for i in range(rng.randrange(3, 9)))
        convs.append(Conversation(f"t{c}", utts))
    variant = rng.choice(list(GrammarVariant))
    grammar = train_discourse(convs, tagset, order, variant)
    speakers = tuple(rng.choice("AB") for _ in range(n_utts))
    scores = np.array([[rng.uniform(-6.0, 0.0) for _ in labels]
                       for _ in range(n_utts)])
    return grammar, LikelihoodTable("r", labels, speakers, scores)


# ---------------------------------------------------------------------------
# Two-state hand fixture
# ---------------------------------------------------------------------------

def test_two_state_viterbi_fixture():
    seq, score = viterbi_decode(StubBigram(), two_state_table())
    # joints: SS .016, SQ .001, QS .036, QQ .006
    assert seq == ["Q", "S"]
    assert math.isclose(score, math.log(0.036), rel_tol=0, abs_tol=1e-12)


def test_two_state_posterior_fixture():
    posts = forward_backward(StubBigram(), two_state_table())
    assert math.isclose(posts[0, 1], 0.042 / 0.059, abs_tol=1e-12)
    assert math.isclose(posts[0, 0], 0.017 / 0.059, abs_tol=1e-12)
    assert math.isclose(posts[1, 0], 0.052 / 0.059, abs_tol=1e-12)
    assert math.isclose(posts[1, 1], 0.007 / 0.059, abs_tol=1e-12)


def test_two_state_brute_force_agrees():
    g, table = StubBigram(), two_state_table()
    seq, score, posts = brute_force_decode(g, table)
    vseq, vscore = viterbi_decode(g, table)
    assert seq == vseq and math.isclose(score, vscore, abs_tol=1e-12)
    assert np.allclose(posts, forward_backward(g, table), atol=1e-12)


# ---------------------------------------------------------------------------
# Brute-force equivalence on random instances
# ---------------------------------------------------------------------------

def test_decoders_match_brute_force():
    rng = random.Random(7)
    for trial in range(40):
        order = rng.choice((1, 2, 3))
        grammar, table = rand_instance(rng, rng.choice((2, 3)), order,
                                       rng.randrange(1, 7))
        bseq, bscore, bposts = brute_force_decode(grammar, table)
        vseq, vscore = viterbi_decode(grammar, table)
        assert vseq == bseq, f"trial {trial}: {vseq} vs {bseq}"
        assert math.isclose(vscore, bscore, rel_tol=0, abs_tol=1e-9)
        posts = forward_backward(grammar, table)
        assert np.allclose(posts, bposts, atol=1e-9), f"trial {trial}"


def test_unigram_posterior_argmax_matches_viterbi():
    rng = random.Random(3)
    for _ in range(10):
        grammar, table = rand_instance(rng, 3, 1, 5)
        seq, _ = viterbi_decode(grammar, table)
        posts = forward_backward(grammar, table)
        # no sequence coupling at order 1: both pick the per-row argmax
        assert [table.labels[j] for j in np.argmax(posts, axis=1)] == seq


def test_row_constant_shift_is_invisible():
    rng = random.Random(11)
    grammar, table = rand_instance(rng, 3, 2, 5)
    shifts = np.array([rng.uniform(-4.0, 4.0) for _ in range(5)])
    shifted = LikelihoodTable(table.conversation_id, table.labels,
                              table.speakers, table.scores + shifts[:, None])
    seq, score = viterbi_decode(grammar, table)
    seq2, score2 = viterbi_decode(grammar, shifted)
    assert seq2 == seq
    assert math.isclose(score2, score + shifts.sum(), abs_tol=1e-9)
    assert np.allclose(forward_backward(grammar, shifted),
                       forward_backward(grammar, table), atol=1e-12)


def test_single_utterance_conversation():
    rng = random.Random(19)
    grammar, table = rand_instance(rng, 3, 2, 1)
    start = np.array([grammar.transition_log_prob((), (lab, table.speakers[0]))
                      for lab in table.labels])
    end = np.array([grammar.end_log_prob(((lab, table.speakers[0]),))
                    for lab in table.labels])
    row = start + table.scores[0] + end
    posts = forward_backward(grammar, table)
    assert np.allclose(posts[0], np.exp(row) / np.exp(row).sum(), atol=1e-12)
    seq, score = viterbi_decode(grammar, table)
    assert seq == [table.labels[int(np.argmax(row))]]
    assert math.isclose(score, row.max(), abs_tol=1e-12)


# ---------------------------------------------------------------------------
# Online (filtered) posteriors
# ---------------------------------------------------------------------------

def test_online_rows_are_normalized():
    rng = random.Random(23)
    for order in (1, 2, 3):
        grammar, table = rand_instance(rng, 3, order, 6)
        rows = forward_backward(grammar, table, online=True)
        assert np.allclose(rows.sum(axis=1), 1.0, atol=1e-12)


def test_online_equals_offline_on_truncated_prefix():
    # with a unit end term, filtering at i is exactly smoothing over the
    # first i+1 utterances
    g, table = StubBigram(), two_state_table()
    online = forward_backward(g, table, online=True)
    for i in range(len(table)):
        prefix = LikelihoodTable(table.conversation_id, table.labels,
                                 table.speakers[:i + 1],
                                 table.scores[:i + 1])
        assert np.allclose(online[i], forward_backward(g, prefix)[-1],
                           atol=1e-12)


def test_online_ignores_end_preference():
    g = StubBigram(end={"S": 0.9, "Q": 0.1})
    table = two_state_table()
    online = forward_backward(g, table, online=True)
    offline = forward_backward(g, table)
    assert not np.allclose(online[-1], offline[-1], atol=1e-3)
    # the end factor also reaches earlier rows through the backward pass
    assert not np.allclose(online[0], offline[0], atol=1e-3)


# ---------------------------------------------------------------------------
# Evidence fusion
# ---------------------------------------------------------------------------

def fusion_pair():
    word = LikelihoodTable("c", ("S", "Q"), ("A",), np.array([[-1.0, -3.0]]),
                           frozenset({"words"}))
    pros = LikelihoodTable("c", ("S", "Q"), ("A",), np.array([[-2.0, -0.5]]),
                           frozenset({"prosody"}))
    return word, pros


def test_combine_unit_weights_adds():
    word, pros = fusion_pair()
    out = combine_likelihoods(word, pros, CombinationWeights(1.0, 1.0))
    assert np.allclose(out.scores, [[-3.0, -3.5]])
    assert out.sources == frozenset({"words", "prosody", "combined"})


def test_combine_alpha_zero_drops_prosody():
    word, pros = fusion_pair()
    out = combine_likelihoods(word, pros, CombinationWeights(0.0, 1.0))
    assert np.allclose(out.scores, word.scores)
    none_out = combine_likelihoods(word, None, CombinationWeights(0.0, 1.0))
    assert np.allclose(none_out.scores, word.scores)


def test_combine_beta_scales_the_sum():
    word = LikelihoodTable("c", ("S",), ("A",), np.array([[-1.0]]))
    pros = LikelihoodTable("c", ("S",), ("A",), np.array([[-2.0]]))
    out = combine_likelihoods(word, pros, CombinationWeights(0.5, 2.0))
    assert math.isclose(out.scores[0, 0], -4.0, abs_tol=1e-12)


def test_combine_rejects_mismatched_tables():
    word, _ = fusion_pair()
    other = LikelihoodTable("other", ("S", "Q"), ("A",),
                            np.array([[-2.0, -0.5]]))
    with pytest.raises(ValueError):
        combine_likelihoods(word, other, CombinationWeights(1.0))


def test_weight_validation():
    assert CombinationWeights(0.0).beta == 1.0
    with pytest.raises(ValueError):
        CombinationWeights(-0.1)
    with pytest.raises(ValueError):
        CombinationWeights(1.0, 0.0)


# ---------------------------------------------------------------------------
# Table validation and I/O
# ---------------------------------------------------------------------------

def test_table_rejects_nan_and_plus_inf():
    with pytest.raises(ValueError):
        LikelihoodTable("c", ("S",), ("A",), np.array([[math.nan]]))
    with pytest.raises(ValueError):
        LikelihoodTable("c", ("S",), ("A",), np.array([[math.inf]]))
    with pytest.raises(ValueError):
        LikelihoodTable("c", ("S", "Q"), ("A",), np.array([[-1.0]]))
    LikelihoodTable("c", ("S",), ("A",), np.array([[-math.inf]]))


def test_inadmissible_utterance_raises():
    bad = LikelihoodTable("c", ("S", "Q"), ("A", "B"),
                          np.array([[-1.0, -2.0], [-math.inf, -math.inf]]))
    for order in (1, 2):
        grammar, _ = rand_instance(random.Random(5), 2, order, 2)
        with pytest.raises(ValueError, match="admissible"):
            viterbi_decode(grammar, bad)
        with pytest.raises(ValueError, match="admissible"):
            forward_backward(grammar, bad)


def test_empty_conversation_rejected():
    table = LikelihoodTable("c", ("S", "Q"), (), np.empty((0, 2)))
    with pytest.raises(ValueError, match="empty"):
        viterbi_decode(StubBigram(), table)
    with pytest.raises(ValueError, match="empty"):
        forward_backward(StubBigram(), table)


def test_dump_load_round_trip(tmp_path):
    rng = random.Random(29)
    _, t1 = rand_instance(rng, 3, 2, 4)
    _, t2 = rand_instance(rng, 3, 2, 2)
    t2 = LikelihoodTable("r2", t2.labels, t2.speakers, t2.scores)
    path = tmp_path / "lik.tsv"
    dump_likelihoods([t1, t2], path)
    convs = [Conversation(t.conversation_id, tuple(
        Utterance(i, spk, None, ("w",)) for i, spk in enumerate(t.speakers)))
        for t in (t1, t2)]
    back = load_likelihoods(path, convs, t1.labels)
    for orig, got in zip((t1, t2), back):
        assert got.conversation_id == orig.conversation_id
        assert got.labels == orig.labels and got.speakers == orig.speakers
        assert np.array_equal(got.scores, orig.scores)  # repr: exact floats


def test_load_likelihoods_missing_conversation(tmp_path):
    path = tmp_path / "lik.tsv"
    dump_likelihoods([two_state_table()], path)
    stranger = Conversation("nope", (Utterance(0, "A", None, ("w",)),))
    with pytest.raises(ValueError, match="nope"):
        load_likelihoods(path, [stranger], ("S", "Q"))


# ---------------------------------------------------------------------------
# Fusion weight tuning
# ---------------------------------------------------------------------------

def tuning_corpus(flat_words):
    """Four conversations whose labels alternate; prosody always knows the
    answer, words only when ``flat_words`` is False."""
    labels = ("S", "Q")
    tagset = TagSet(labels)
    convs, word_tables, pros_tables, refs = [], [], [], {}
    for c in range(4):
        seq = [labels[(c + i) % 2] for i in range(6)]
        spk = tuple("AB"[i % 2] for i in range(6))
        convs.append(Conversation(f"c{c}", tuple(
            Utterance(i, spk[i], lab, ("w",)) for i, lab in enumerate(seq))))
        refs[f"c{c}"] = seq
        wrow = np.array([[0.0 if flat_words else (-0.5 if lab == s else -1.5)
                          for lab in labels] for s in seq])
        prow = np.array([[-0.2 if lab == s else -3.0 for lab in labels]
                         for s in seq])
        word_tables.append(LikelihoodTable(f"c{c}", labels, spk, wrow,
                                           frozenset({"words"})))
        pros_tables.append(LikelihoodTable(f"c{c}", labels, spk, prow,
                                           frozenset({"prosody"})))
    grammar = train_discourse(convs, tagset, 2, GrammarVariant.DA_ONLY)
    return grammar, word_tables, pros_tables, refs


def test_tuning_finds_prosody_when_words_are_flat():
    grammar, wts, pts, refs = tuning_corpus(flat_words=True)
    result = tune_alpha_beta(grammar, wts, pts, refs, seed=0)
    assert result.better.alpha > 0.0
    assert result.accuracy == 1.0
    assert result.half_accuracies == (1.0, 1.0)


def test_tuning_tie_breaks_toward_smallest_weights():
    # words alone already decode perfectly, so the whole grid ties and the
    # scan order must pick the smallest alpha, then the smallest beta
    grammar, wts, pts, refs = tuning_corpus(flat_words=False)
    result = tune_alpha_beta(grammar, wts, pts, refs, seed=0)
    assert result.weights[0] == CombinationWeights(0.0, 0.1)
    assert result.weights[1] == CombinationWeights(0.0, 0.1)
    assert result.better == CombinationWeights(0.0, 0.1)


def test_tuning_input_validation():
    grammar, wts, pts, refs = tuning_corpus(flat_words=False)
    with pytest.raises(ValueError):
        tune_alpha_beta(grammar, wts, pts[:-1], refs)
    with pytest.raises(ValueError):
        tune_alpha_beta(grammar, wts[:1], pts[:1], refs)
