"""Word error rate and n-best rescoring."""

import math
import random

import numpy as np
import pytest

from dialact.corpus import (Conversation, Hypothesis, NBestList, TagSet,
                            Utterance)
from dialact.discourse import DiscourseGrammar, GrammarVariant
from dialact.ngram import sequence_log_prob
from dialact.rescore import (METHODS, WordErrors, best_hypothesis, corpus_wer,
                             hypothesis_scores, mixture_lm_scores,
                             mixture_posterior_scores, per_da_wer_report,
                             rescore_corpus, wer)
from dialact.wordmodels import ScoreScaling, train_da_lms

TS2 = TagSet(("S", "Q"))


def train_lms():
    rows = [("S", ("i", "think", "so")), ("S", ("we", "did", "it")),
            ("S", ("i", "agree", "so")), ("S", ("so", "we", "did")),
            ("Q", ("do", "you", "know")), ("Q", ("what", "was", "that")),
            ("Q", ("do", "we", "know")), ("Q", ("what", "do", "you"))]
    utts = tuple(Utterance(i, "AB"[i % 2], lab, words)
                 for i, (lab, words) in enumerate(rows))
    return train_da_lms([Conversation("train", utts)], TS2, order=2)


def nb(*hyps):
    return NBestList(tuple(Hypothesis(tuple(w.split()), a) for w, a in hyps))


# ---------------------------------------------------------------------------
# Word error rate
# ---------------------------------------------------------------------------

def test_wer_counts_each_edit_kind():
    e = wer("a b c".split(), "x b c d".split())
    assert e == WordErrors(1, 1, 0, 2 / 3)
    assert e.total == 2


def test_wer_single_deletion():
    e = wer("so do you go".split(), "so you go".split())
    assert e == WordErrors(0, 0, 1, 0.25)


def test_wer_prefers_substitution_over_ins_del_pair():
    # "a b" vs "a c" is one substitution, not one insertion + one deletion
    e = wer("a b".split(), "a c".split())
    assert (e.substitutions, e.insertions, e.deletions) == (1, 0, 0)
    e = wer("x y z".split(), "p q r".split())
    assert (e.substitutions, e.insertions, e.deletions) == (3, 0, 0)


def test_wer_edges():
    assert wer("a b".split(), "a b".split()) == WordErrors(0, 0, 0, 0.0)
    assert wer("a b".split(), []) == WordErrors(0, 0, 2, 1.0)
    empty = wer([], "a b".split())
    assert (empty.substitutions, empty.insertions, empty.deletions) == (0, 2, 0)
    assert math.isnan(empty.rate)
    assert math.isnan(wer([], []).rate)


def test_wer_rate_can_exceed_one():
    assert wer("a".split(), "x y z".split()).rate == 3.0


def test_wer_never_beats_length_difference_bound():
    rng = random.Random(8)
    vocab = ["a", "b", "c", "d"]
    for _ in range(200):
        ref = [rng.choice(vocab) for _ in range(rng.randrange(0, 8))]
        hyp = [rng.choice(vocab) for _ in range(rng.randrange(0, 8))]
        e = wer(ref, hyp)
        assert e.total >= abs(len(ref) - len(hyp))
        assert e.total <= max(len(ref), len(hyp))
        # symmetry: swapping roles swaps insertions and deletions
        back = wer(hyp, ref)
        assert back.total == e.total
        assert (back.insertions, back.deletions) == (e.deletions, e.insertions)


def test_corpus_wer_pools_error_counts():
    pairs = [("a b c".split(), "a b c".split()),
             ("a b".split(), "a x".split()),
             ("q".split(), "q r".split())]
    pooled = corpus_wer(pairs)
    assert pooled == WordErrors(1, 1, 0, 2 / 6)
    assert math.isnan(corpus_wer([]).rate)


def test_per_da_report_shares_and_sorting():
    refs = {("c", 0): ("a", "b"), ("c", 1): ("c", "d"), ("c", 2): ("e", "f")}
    labels = {("c", 0): "S", ("c", 1): "Q", ("c", 2): "S"}
    base = {("c", 0): ("a", "x"), ("c", 1): ("c", "d"), ("c", 2): ("e", "x")}
    meth = {("c", 0): ("a", "b"), ("c", 1): ("c", "x"), ("c", 2): ("e", "x")}
    rows = per_da_wer_report(refs, labels, base, meth)
    assert [r["label"] for r in rows] == ["S", "Q"]  # improvement first
    assert math.isclose(sum(r["word_share"] for r in rows), 100.0)
    s_row = rows[0]
    assert math.isclose(s_row["baseline_wer"], 0.5)
    assert math.isclose(s_row["method_wer"], 0.25)
    assert math.isclose(s_row["delta"], -0.25)
    with pytest.raises(ValueError):
        per_da_wer_report({}, {}, {}, {})


# ---------------------------------------------------------------------------
# Scoring primitives
# ---------------------------------------------------------------------------

def test_hypothesis_scores_formula():
    lms = train_lms()
    scaling = ScoreScaling(lm_weight=5.0, word_penalty=2.0)
    nbest = nb(("do you", -20.0), ("i think", -25.0))
    scores = hypothesis_scores(nbest, lms.fallback, scaling)
    for i, hyp in enumerate(nbest):
        expect = (hyp.acoustic_score - 2.0 * len(hyp.words)) / 5.0 + \
            sequence_log_prob(lms.fallback, hyp.words)
        assert math.isclose(scores[i], expect, abs_tol=1e-12)


def test_mixture_lm_scores_are_posterior_weighted():
    lms = train_lms()
    nbest = nb(("do you know", -30.0), ("i think so", -30.0))
    post = {"S": 0.3, "Q": 0.7}
    scores = mixture_lm_scores(nbest, lms, post)
    for i, hyp in enumerate(nbest):
        mix = sum(p * math.exp(sequence_log_prob(lms.models[lab], hyp.words))
                  for lab, p in post.items())
        expect = hyp.acoustic_score / 10.0 + math.log(mix)
        assert math.isclose(scores[i], expect, rel_tol=1e-9)


def test_certain_posterior_collapses_mixture_to_one_model():
    lms = train_lms()
    nbest = nb(("do you know", -30.0), ("i think so", -28.0))
    mixed = mixture_lm_scores(nbest, lms, {"S": 0.0, "Q": 1.0})
    single = hypothesis_scores(nbest, lms.models["Q"])
    assert np.allclose(mixed, single, atol=1e-12)


def test_mixture_posterior_rows_are_distributions():
    lms = train_lms()
    nbest = nb(("do you know", -30.0), ("i think so", -31.0), ("what", -29.0))
    for flag in (True, False):
        weights = mixture_posterior_scores(nbest, lms, {"S": 0.4, "Q": 0.6},
                                           per_da_normalizer=flag)
        assert weights.shape == (3,)
        assert math.isclose(weights.sum(), 1.0, abs_tol=1e-9)
        assert (weights >= 0).all()


def test_normalizer_switch_preserves_mixture_lm_ranking():
    lms = train_lms()
    rng = random.Random(12)
    words = ["do", "you", "know", "what", "i", "think", "so", "we"]
    for _ in range(30):
        hyps = [(" ".join(rng.choice(words)
                          for _ in range(rng.randrange(1, 4))),
                 rng.uniform(-40.0, -20.0)) for _ in range(4)]
        nbest = nb(*hyps)
        q = rng.uniform(0.05, 0.95)
        post = {"S": 1.0 - q, "Q": q}
        shared = mixture_posterior_scores(nbest, lms, post,
                                          per_da_normalizer=False)
        mix = mixture_lm_scores(nbest, lms, post)
        assert list(np.argsort(-shared, kind="stable")) == \
            list(np.argsort(-mix, kind="stable"))


def test_mixture_posterior_rejects_massless_posterior():
    lms = train_lms()
    with pytest.raises(ValueError, match="mass"):
        mixture_posterior_scores(nb(("do you", -20.0)), lms,
                                 {"S": 0.0, "Q": 0.0})


def test_best_hypothesis_tie_breaks_on_words():
    nbest = nb(("b b", -10.0), ("a a", -10.0))
    assert best_hypothesis(nbest, [1.5, 1.5]) == 1  # "a a" < "b b"
    assert best_hypothesis(nbest, [1.5, 1.0]) == 0
    flipped = nb(("a a", -10.0), ("b b", -10.0))
    assert flipped.hypotheses[best_hypothesis(flipped, [2.0, 2.0])].words == \
        nbest.hypotheses[best_hypothesis(nbest, [2.0, 2.0])].words


# ---------------------------------------------------------------------------
# Corpus driver
# ---------------------------------------------------------------------------

def eval_conv(conv_id="e"):
    # acoustics tuned so every utterance's DA posterior favors the truth,
    # yet the pooled baseline LM still picks the wrong words at index 2
    rows = [
        ("A", "S", "i think so",
         [("do you know", -15.0), ("i think so", -5.0)]),
        ("B", "Q", "do you know",
         [("we did it", -10.0), ("do you know", -10.8)]),
        ("A", "S", "we did it",
         [("we did it", -10.0), ("what was that", -18.0)]),
    ]
    utts = []
    for i, (spk, lab, words, hyps) in enumerate(rows):
        utts.append(Utterance(i, spk, lab, tuple(words.split()),
                              nbest=nb(*hyps)))
    return Conversation(conv_id, tuple(utts))


def test_rescore_corpus_runs_all_methods():
    lms = train_lms()
    grammar = DiscourseGrammar.uniform(TS2, GrammarVariant.DA_ONLY)
    result = rescore_corpus([eval_conv()], grammar, lms)
    assert set(result.methods) == set(METHODS)
    assert result.skipped == []
    for name, mres in result.methods.items():
        assert set(mres.chosen) == set(result.references)
        if name == "mixture_of_posteriors":
            assert mres.perplexity is None
        else:
            assert mres.perplexity > 1.0
    # posteriors are distributions over the tag set
    for post in result.posteriors.values():
        assert math.isclose(sum(post.values()), 1.0, abs_tol=1e-9)


def test_oracle_never_loses_to_picking_blind():
    lms = train_lms()
    grammar = DiscourseGrammar.uniform(TS2, GrammarVariant.DA_ONLY)
    result = rescore_corpus([eval_conv()], grammar, lms)
    oracle = result.methods["oracle"].wer.rate
    baseline = result.methods["baseline"].wer.rate
    assert oracle < baseline
    # the class LM recovers "we did it"; the pooled LM prefers the
    # question words despite their acoustic handicap
    assert oracle == 0.0
    assert result.methods["baseline"].chosen[("e", 2)] == \
        ("what", "was", "that")


def test_identical_class_lms_reduce_every_method_to_baseline():
    # one class in the tag set: every model IS the fallback's training data
    ts1 = TagSet(("S",))
    utts = tuple(Utterance(i, "AB"[i % 2], "S", words) for i, words in
                 enumerate([("i", "think", "so"), ("do", "you", "know"),
                            ("we", "did", "it")]))
    lms = train_da_lms([Conversation("t", utts)], ts1, order=2)
    grammar = DiscourseGrammar.uniform(ts1, GrammarVariant.DA_ONLY)
    conv = Conversation("e", (
        Utterance(0, "A", "S", ("i", "think", "so"),
                  nbest=nb(("do you know", -10.0), ("i think so", -10.4))),))
    result = rescore_corpus([conv], grammar, lms)
    expect = result.methods["baseline"].chosen
    for name in ("one_best", "oracle", "mixture_of_lms"):
        assert result.methods[name].chosen == expect


def test_true_label_posterior_makes_one_best_match_oracle():
    # the fixture's posteriors all favor the truth, so one_best scores with
    # the same class model as oracle and must choose identically
    lms = train_lms()
    grammar = DiscourseGrammar.uniform(TS2, GrammarVariant.DA_ONLY)
    result = rescore_corpus([eval_conv()], grammar, lms)
    for key, post in result.posteriors.items():
        assert post[result.labels[key]] > 0.5
    assert result.methods["one_best"].chosen == result.methods["oracle"].chosen
    assert result.methods["one_best"].perplexity == \
        result.methods["oracle"].perplexity


def test_rescore_skips_and_reports_bare_utterances():
    lms = train_lms()
    grammar = DiscourseGrammar.uniform(TS2, GrammarVariant.DA_ONLY)
    conv = Conversation("m", (
        Utterance(0, "A", "S", ("i", "think", "so"),
                  nbest=nb(("i think so", -9.0))),
        Utterance(1, "B", "Q", ("do", "you", "know")),
    ))
    result = rescore_corpus([conv], grammar, lms)
    assert result.skipped == [("m", 1)]
    assert set(result.references) == {("m", 0)}


def test_oracle_requires_labels():
    lms = train_lms()
    grammar = DiscourseGrammar.uniform(TS2, GrammarVariant.DA_ONLY)
    conv = Conversation("u", (
        Utterance(0, "A", None, ("i", "think", "so"),
                  nbest=nb(("i think so", -9.0))),))
    with pytest.raises(ValueError, match="label"):
        rescore_corpus([conv], grammar, lms, methods=("oracle",))
    # other methods run fine without labels
    result = rescore_corpus([conv], grammar, lms,
                            methods=("baseline", "mixture_of_lms"))
    assert result.labels == {}


def test_unknown_method_rejected():
    lms = train_lms()
    grammar = DiscourseGrammar.uniform(TS2, GrammarVariant.DA_ONLY)
    with pytest.raises(ValueError, match="method"):
        rescore_corpus([eval_conv()], grammar, lms, methods=("magic",))


def test_separate_rescoring_lms_are_used_for_scores():
    # posteriors come from the first set, hypothesis scores from the second:
    # make the second set prefer the opposite hypothesis and watch the pick
    lms = train_lms()
    ts1 = TagSet(("S",))
    swapped_utts = tuple(Utterance(i, "AB"[i % 2], "S", words)
                         for i, words in enumerate(
                             [("do", "you", "know"), ("what", "was", "that")]))
    prefer_q = train_da_lms([Conversation("t", swapped_utts)], ts1, order=2)
    conv = Conversation("e", (
        Utterance(0, "A", "S", ("i", "think", "so"),
                  nbest=nb(("i think so", -5.0), ("do you know", -9.0))),))
    grammar = DiscourseGrammar.uniform(TS2, GrammarVariant.DA_ONLY)
    own = rescore_corpus([conv], grammar, lms, methods=("baseline",))
    other = rescore_corpus([conv], grammar, lms, rescoring_lms=prefer_q,
                           methods=("baseline",))
    assert own.methods["baseline"].chosen[("e", 0)] == ("i", "think", "so")
    assert other.methods["baseline"].chosen[("e", 0)] == ("do", "you", "know")
