"""N-best rescoring with dialogue-act language models, and word error rate.

Every hypothesis score has the shape  a / lm_weight + L - word_penalty *
|W| / lm_weight  where a is the recognizer's acoustic log score and L a
language model log probability.  The methods differ in L:

  baseline              the pooled fallback LM
  one_best / oracle     the single most probable (or true) DA's LM
  mixture_of_lms        log sum_U P(W | U) P(U | E), posterior-weighted
  mixture_of_posteriors per-DA normalized hypothesis weights recombined
                        with the DA posteriors (scores the posterior mass
                        of each hypothesis rather than its probability)

WER alignments minimize substitutions + insertions + deletions, preferring
a substitution over an insertion-deletion pair when totals tie.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .corpus import Conversation, Hypothesis, NBestList
from .hmm import LikelihoodTable, forward_backward
from .ngram import log_sum, sequence_log_prob
from .wordmodels import DaLmSet, ScoreScaling, word_likelihood_tables


# ---------------------------------------------------------------------------
# Word error rate
# ---------------------------------------------------------------------------

class WordErrors(NamedTuple):
    substitutions: int
    insertions: int
    deletions: int
    rate: float

    @property
    def total(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> WordErrors:
    """Minimum-edit alignment counts and the error rate.

    Rate is (S+I+D) / |reference|; an empty reference yields rate nan with
    the insertions still counted.
    """
    ref = list(reference)
    hyp = list(hypothesis)
    n, m = len(ref), len(hyp)
    # DP over (total edits, insertions + deletions); the second component
    # implements the substitution-over-ins+del preference on ties.
    prev = [(j, j) for j in range(m + 1)]
    prev_counts = [(0, j, 0) for j in range(m + 1)]  # (sub, ins, del)
    for i in range(1, n + 1):
        cur = [(i, i)]
        cur_counts = [(0, 0, i)]
        for j in range(1, m + 1):
            if ref[i - 1] == hyp[j - 1]:
                cand = [(prev[j - 1], prev_counts[j - 1], (0, 0, 0))]
            else:
                cand = [(add2(prev[j - 1], (1, 0)), prev_counts[j - 1], (1, 0, 0))]
            cand.append((add2(cur[j - 1], (1, 1)), cur_counts[j - 1], (0, 1, 0)))
            cand.append((add2(prev[j], (1, 1)), prev_counts[j], (0, 0, 1)))
            best = min(cand, key=lambda c: c[0])
            cur.append(best[0])
            cur_counts.append(tuple(a + b for a, b in zip(best[1], best[2])))
        prev = cur
        prev_counts = cur_counts
    s, ins, dels = prev_counts[m]
    rate = (s + ins + dels) / n if n else math.nan
    return WordErrors(s, ins, dels, rate)


def add2(pair: tuple[int, int], step: tuple[int, int]) -> tuple[int, int]:
    return (pair[0] + step[0], pair[1] + step[1])


def corpus_wer(pairs: Sequence[tuple[Sequence[str], Sequence[str]]]) -> WordErrors:
    """Aggregate WER over (reference, hypothesis) pairs."""
    s = i = d = ref_words = 0
    for ref, hyp in pairs:
        e = wer(ref, hyp)
        s += e.substitutions
        i += e.insertions
        d += e.deletions
        ref_words += len(ref)
    rate = (s + i + d) / ref_words if ref_words else math.nan
    return WordErrors(s, i, d, rate)


def per_da_wer_report(references: Mapping[tuple[str, int], Sequence[str]],
                      labels: Mapping[tuple[str, int], str],
                      baseline: Mapping[tuple[str, int], Sequence[str]],
                      method: Mapping[tuple[str, int], Sequence[str]]
                      ) -> list[dict]:
    """Per-label WER comparison, sorted by reduction (best improvement first).

    Each row: label, share of reference words (percent, rows sum to 100),
    baseline and method error rates, and their difference.
    """
    by_label: dict[str, list[tuple[str, int]]] = {}
    total_words = 0
    for key, ref in references.items():
        by_label.setdefault(labels[key], []).append(key)
        total_words += len(ref)
    if total_words == 0:
        raise ValueError("no reference words")
    rows = []
    for label, keys in by_label.items():
        base = corpus_wer([(references[k], baseline[k]) for k in keys])
        meth = corpus_wer([(references[k], method[k]) for k in keys])
        words = sum(len(references[k]) for k in keys)
        rows.append({
            "label": label,
            "word_share": 100.0 * words / total_words,
            "baseline_wer": base.rate,
            "method_wer": meth.rate,
            "delta": meth.rate - base.rate,
        })
    rows.sort(key=lambda r: (r["delta"], r["label"]))
    return rows


# ---------------------------------------------------------------------------
# Per-utterance rescoring primitives
# ---------------------------------------------------------------------------

def hypothesis_scores(nbest: NBestList, model,
                      scaling: ScoreScaling = ScoreScaling()) -> np.ndarray:
    """Score every hypothesis under one fixed LM."""
    return np.array([scaling.hyp_score(h.acoustic_score,
                                       sequence_log_prob(model, h.words),
                                       len(h.words))
                     for h in nbest])


def mixture_lm_scores(nbest: NBestList, da_lms: DaLmSet,
                      posterior: Mapping[str, float],
                      scaling: ScoreScaling = ScoreScaling()) -> np.ndarray:
    """Sentence-level mixture: acoustic and penalty terms plus
    log sum_U P(W | U) P(U | E)."""
    out = np.empty(len(nbest))
    logpost = {lab: (math.log(p) if p > 0.0 else -math.inf)
               for lab, p in posterior.items()}
    for h_i, hyp in enumerate(nbest):
        terms = [logpost[lab] + sequence_log_prob(da_lms.models[lab], hyp.words)
                 for lab in da_lms.labels if logpost[lab] > -math.inf]
        out[h_i] = scaling.hyp_score(hyp.acoustic_score, log_sum(terms),
                                     len(hyp.words))
    return out


def mixture_posterior_scores(nbest: NBestList, da_lms: DaLmSet,
                             posterior: Mapping[str, float],
                             scaling: ScoreScaling = ScoreScaling(),
                             per_da_normalizer: bool = True) -> np.ndarray:
    """Posterior-mass rescoring.

    With ``per_da_normalizer`` each DA's hypothesis scores are normalized
    over the n-best list before being mixed with the DA posteriors (the
    acoustic prior P(A|U) is realized on the list).  Setting it False uses
    one shared normalizer for all DAs, which reduces the method to a
    monotone transform of :func:`mixture_lm_scores`.
    """
    m = len(nbest)
    score_rows = {}
    for lab in da_lms.labels:
        if posterior.get(lab, 0.0) <= 0.0:
            continue
        score_rows[lab] = hypothesis_scores(nbest, da_lms.models[lab], scaling)
    if not score_rows:
        raise ValueError("posterior puts no mass on any label")
    out = np.zeros(m)
    if per_da_normalizer:
        for lab, row in score_rows.items():
            z = log_sum(row)
            out += posterior[lab] * np.exp(row - z)
    else:
        mixed = np.array([
            log_sum(math.log(posterior[lab]) + row[h]
                    for lab, row in score_rows.items())
            for h in range(m)])
        out = np.exp(mixed - log_sum(mixed))
    return out


def best_hypothesis(nbest: NBestList, scores: Sequence[float]) -> int:
    """Index of the highest score; exact ties go to the smaller word tuple,
    making the choice independent of list order."""
    best = 0
    for i in range(1, len(nbest)):
        if scores[i] > scores[best] or (
                scores[i] == scores[best]
                and nbest.hypotheses[i].words < nbest.hypotheses[best].words):
            best = i
    return best


# ---------------------------------------------------------------------------
# Corpus-level driver
# ---------------------------------------------------------------------------

METHODS = ("baseline", "one_best", "oracle", "mixture_of_lms",
           "mixture_of_posteriors")


@dataclass
class MethodResult:
    chosen: dict[tuple[str, int], tuple[str, ...]]
    wer: WordErrors
    perplexity: float | None


@dataclass
class RescoreResult:
    methods: dict[str, MethodResult]
    posteriors: dict[tuple[str, int], dict[str, float]]
    skipped: list[tuple[str, int]]
    references: dict[tuple[str, int], tuple[str, ...]]
    labels: dict[tuple[str, int], str]


def rescore_corpus(convs: Sequence[Conversation], grammar,
                   da_lms: DaLmSet, rescoring_lms: DaLmSet | None = None,
                   methods: Sequence[str] = METHODS,
                   scaling: ScoreScaling = ScoreScaling()) -> RescoreResult:
    """Run the requested rescoring methods over every utterance with an
    n-best list.

    DA posteriors come from forward-backward over n-best word evidence using
    ``da_lms`` (the unsmoothed classification set); hypothesis probabilities
    use ``rescoring_lms`` (typically the smoothed set; defaults to
    ``da_lms``).  Utterances without recognizer output are skipped and
    reported.
    """
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    if rescoring_lms is None:
        rescoring_lms = da_lms

    with_nbest = []
    skipped = []
    for conv in convs:
        missing = [u.index for u in conv if u.nbest is None]
        if missing:
            skipped.extend((conv.conv_id, i) for i in missing)
        if len(missing) < len(conv):
            # decode over the utterances that do have recognizer output
            kept = [u for u in conv if u.nbest is not None]
            with_nbest.append((conv, kept))

    posteriors: dict[tuple[str, int], dict[str, float]] = {}
    references: dict[tuple[str, int], tuple[str, ...]] = {}
    true_labels: dict[tuple[str, int], str] = {}
    nbests: dict[tuple[str, int], NBestList] = {}
    for conv, kept in with_nbest:
        sub = Conversation(conv.conv_id, tuple(
            u.__class__(i, u.speaker, u.da_label, u.words, u.nbest, u.prosody)
            for i, u in enumerate(kept)))
        table = word_likelihood_tables(da_lms, [sub], "nbest", scaling)[0]
        posts = forward_backward(grammar, table)
        for row, utt in zip(posts, kept):
            key = (conv.conv_id, utt.index)
            posteriors[key] = {lab: float(p) for lab, p in
                               zip(da_lms.labels, row)}
            references[key] = utt.words
            if utt.da_label is not None:
                true_labels[key] = da_lms.tagset.collapse(utt.da_label)
            nbests[key] = utt.nbest

    results: dict[str, MethodResult] = {}
    for method in methods:
        chosen: dict[tuple[str, int], tuple[str, ...]] = {}
        log_total = 0.0
        tokens = 0
        has_ppl = method != "mixture_of_posteriors"
        for key, nbest in nbests.items():
            post = posteriors[key]
            if method == "baseline":
                scores = hypothesis_scores(nbest, rescoring_lms.fallback, scaling)
            elif method == "one_best":
                top = max(da_lms.labels, key=lambda lab: post[lab])
                scores = hypothesis_scores(nbest, rescoring_lms.models[top],
                                           scaling)
            elif method == "oracle":
                if key not in true_labels:
                    raise ValueError(f"{key}: oracle rescoring needs a labeled "
                                     f"reference")
                scores = hypothesis_scores(
                    nbest, rescoring_lms.models[true_labels[key]], scaling)
            elif method == "mixture_of_lms":
                scores = mixture_lm_scores(nbest, rescoring_lms, post, scaling)
            else:
                scores = mixture_posterior_scores(nbest, rescoring_lms, post,
                                                  scaling)
            chosen[key] = nbest.hypotheses[best_hypothesis(nbest, scores)].words
            if has_ppl:
                log_total += _reference_log_prob(method, rescoring_lms, post,
                                                 true_labels.get(key),
                                                 references[key])
                tokens += len(references[key]) + 1
        pairs = [(references[k], chosen[k]) for k in chosen]
        results[method] = MethodResult(
            chosen=chosen,
            wer=corpus_wer(pairs),
            perplexity=math.exp(-log_total / tokens) if has_ppl and tokens else None,
        )
    return RescoreResult(results, posteriors, skipped, references, true_labels)


def _reference_log_prob(method: str, lms: DaLmSet, post: Mapping[str, float],
                        true_label: str | None, words: Sequence[str]) -> float:
    if method == "baseline":
        return sequence_log_prob(lms.fallback, words)
    if method == "one_best":
        top = max(lms.labels, key=lambda lab: post[lab])
        return sequence_log_prob(lms.models[top], words)
    if method == "oracle":
        if true_label is None:
            raise ValueError("oracle perplexity needs labeled references")
        return sequence_log_prob(lms.models[true_label], words)
    # mixture of LMs: the sentence probability is itself a mixture
    terms = [math.log(post[lab]) + sequence_log_prob(lms.models[lab], words)
             for lab in lms.labels if post[lab] > 0.0]
    return log_sum(terms)
