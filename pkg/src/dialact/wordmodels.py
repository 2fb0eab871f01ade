"""Per-dialogue-act word language models.

One backoff model per tag-set class, trained on the pooled utterances of
that class over a vocabulary shared by all models, plus a fallback model
pooled over everything.  The fallback doubles as the recognizer-style
baseline LM and is substituted (with a warning) for classes that have no
training utterances.

Evidence for the decoder comes in three modes:

  true_words   score the reference transcript under each class model
  nbest        marginalize over recognizer hypotheses with acoustic scores
  one_best     score only the recognizer's first choice, as if true words
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import Conversation, NBestList, TagSet
from .hmm import LikelihoodTable, forward_backward
from .ngram import (InterpolatedModel, NGramModel, fit_interp_weight, interpolate,
                    log_sum, sequence_log_prob)

MODES = ("true_words", "nbest", "one_best")


@dataclass(frozen=True)
class ScoreScaling:
    """Score shaping for acoustic/LM combination.

    A hypothesis with acoustic log score a, LM log probability l and w words
    scores  a / lm_weight + l - word_penalty * w / lm_weight.  Defaults are
    the conventional lm_weight=10, word_penalty=0; neither is tuned here.
    """

    lm_weight: float = 10.0
    word_penalty: float = 0.0

    def __post_init__(self) -> None:
        if self.lm_weight <= 0.0:
            raise ValueError("lm_weight must be > 0")

    def hyp_score(self, acoustic: float, lm_log_prob: float, n_words: int) -> float:
        return (acoustic - self.word_penalty * n_words) / self.lm_weight + lm_log_prob


@dataclass
class DaLmSet:
    """The per-class word models plus shared metadata."""

    tagset: TagSet
    models: dict[str, object]          # class label -> scorer
    fallback: NGramModel               # pooled over all classes
    order: int
    vocab: frozenset[str]
    from_transcripts: bool = True

    @property
    def labels(self) -> tuple[str, ...]:
        return self.tagset.labels

    def model_for(self, label: str):
        """Scorer for a corpus label (collapsed classes share one model)."""
        return self.models[self.tagset.collapse(label)]


def train_da_lms(convs: Sequence[Conversation], tagset: TagSet,
                 order: int = 3, from_transcripts: bool = True) -> DaLmSet:
    """Train one model per tag-set class over a shared vocabulary."""
    from .ngram import train_ngram

    by_class: dict[str, list[list[str]]] = {lab: [] for lab in tagset.labels}
    pooled: list[list[str]] = []
    for conv in convs:
        for utt in conv:
            if utt.da_label is None:
                continue
            words = list(utt.words)
            by_class[tagset.collapse(utt.da_label)].append(words)
            pooled.append(words)
    if not pooled:
        raise ValueError("no labeled training utterances")
    vocab = {w for seq in pooled for w in seq}
    fallback = train_ngram(pooled, order, vocabulary=vocab, pad=True)
    models: dict[str, object] = {}
    for lab in tagset.labels:
        if by_class[lab]:
            models[lab] = train_ngram(by_class[lab], order, vocabulary=vocab,
                                      pad=True)
        else:
            warnings.warn(f"no training utterances for {lab!r}; "
                          f"using the pooled fallback model")
            models[lab] = fallback
    return DaLmSet(tagset, models, fallback, order, frozenset(fallback.vocab),
                   from_transcripts)


def smooth_da_lms(da_lms: DaLmSet, heldout: Sequence[Conversation],
                  default_weight: float = 0.5) -> tuple[DaLmSet, dict[str, float]]:
    """Interpolate each class model with the pooled fallback.

    Per-class weights are EM-fit on that class's held-out utterances; a class
    with no held-out data keeps ``default_weight`` (with a warning).  Returns
    the smoothed set and the weights.  The unsmoothed set remains the right
    choice for classification; the smoothed one is for rescoring.
    """
    heldout_by_class: dict[str, list[list[str]]] = {lab: [] for lab in da_lms.labels}
    for conv in heldout:
        for utt in conv:
            if utt.da_label is not None:
                heldout_by_class[da_lms.tagset.collapse(utt.da_label)].append(
                    list(utt.words))
    weights: dict[str, float] = {}
    models: dict[str, object] = {}
    for lab in da_lms.labels:
        model = da_lms.models[lab]
        if model is da_lms.fallback:
            weights[lab] = 0.0
            models[lab] = da_lms.fallback
            continue
        data = heldout_by_class[lab]
        if data:
            w = fit_interp_weight(model, da_lms.fallback, data)
        else:
            warnings.warn(f"no held-out utterances for {lab!r}; "
                          f"interpolation weight defaults to {default_weight}")
            w = default_weight
        weights[lab] = w
        models[lab] = interpolate(model, da_lms.fallback, w)
    smoothed = DaLmSet(da_lms.tagset, models, da_lms.fallback, da_lms.order,
                       da_lms.vocab, da_lms.from_transcripts)
    return smoothed, weights


# ---------------------------------------------------------------------------
# Evidence scoring
# ---------------------------------------------------------------------------

def true_word_log_likelihood(da_lms: DaLmSet, words: Sequence[str],
                             label: str) -> float:
    """log P(words | label) under the class model."""
    return sequence_log_prob(da_lms.model_for(label), words)


def nbest_da_log_likelihood(da_lms: DaLmSet, nbest: NBestList, label: str,
                            scaling: ScoreScaling = ScoreScaling()) -> float:
    """log of the acoustic-weighted hypothesis sum for one class.

    Marginalizes log [sum_hyps exp(a/lambda + log P(W|label) - mu|W|/lambda)]
    over the n-best list, in log space.
    """
    model = da_lms.model_for(label)
    return log_sum(
        scaling.hyp_score(h.acoustic_score,
                          sequence_log_prob(model, h.words), len(h.words))
        for h in nbest)


def word_likelihood_tables(da_lms: DaLmSet, convs: Sequence[Conversation],
                           mode: str = "true_words",
                           scaling: ScoreScaling = ScoreScaling()
                           ) -> list[LikelihoodTable]:
    """Build the decoder's evidence tables from the word stream."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    labels = da_lms.labels
    tables = []
    for conv in convs:
        rows = np.empty((len(conv), len(labels)))
        for i, utt in enumerate(conv):
            if mode == "true_words":
                seqs = [utt.words]
            elif mode == "one_best":
                if utt.nbest is None:
                    raise ValueError(f"{conv.conv_id}:{utt.index}: mode "
                                     f"{mode!r} needs an n-best list")
                seqs = [utt.nbest.first.words]
            else:
                if utt.nbest is None:
                    raise ValueError(f"{conv.conv_id}:{utt.index}: mode "
                                     f"'nbest' needs an n-best list")
                seqs = None
            for j, lab in enumerate(labels):
                if seqs is not None:
                    rows[i, j] = sequence_log_prob(da_lms.models[lab], seqs[0])
                else:
                    rows[i, j] = nbest_da_log_likelihood(da_lms, utt.nbest, lab,
                                                         scaling)
        tables.append(LikelihoodTable(conv.conv_id, labels, conv.speakers, rows,
                                      frozenset({f"words:{mode}"})))
    return tables


def classify_from_words(da_lms: DaLmSet, grammar, convs: Sequence[Conversation],
                        mode: str = "true_words",
                        scaling: ScoreScaling = ScoreScaling(),
                        online: bool = False) -> list[list[str]]:
    """Tag every utterance: posterior decoding over word evidence.

    Returns one label list per conversation.  With an order-0 grammar this
    reduces to per-utterance maximum likelihood.
    """
    tables = word_likelihood_tables(da_lms, convs, mode, scaling)
    out = []
    for table in tables:
        posts = forward_backward(grammar, table, online=online)
        picks = np.argmax(posts, axis=1)
        out.append([table.labels[j] for j in picks])
    return out
