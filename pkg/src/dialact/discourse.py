"""Discourse grammars: n-gram priors over dialogue act sequences.

A grammar event is a (DA label, speaker) pair.  Three views of the event
stream are supported:

  DA_ONLY               tokens are bare DA labels; speaker is ignored.
  JOINT                 tokens are pair tokens ``DA·SPK``; the grammar
                        predicts label and speaker jointly.
  SPEAKER_CONDITIONED   same pair tokens, but scores are renormalized over
                        the labels of the observed speaker, so the grammar
                        predicts the label given the speaker.

Conversation boundaries are modeled with speakerless ``<start>``/``<end>``
tokens.  An order-0 grammar ("no grammar") scores every event uniformly
and makes decoders fall back to per-utterance argmax.
"""

from __future__ import annotations

import enum
import math
from pathlib import Path
from typing import Sequence

from .corpus import Conversation, CorpusError, TagSet, load_tagset
from .ngram import END, START, NGramModel, log_sum, read_arpa, train_ngram, write_arpa

PAIR_SEP = "·"  # middle dot, joins label and speaker in pair tokens


class GrammarVariant(str, enum.Enum):
    DA_ONLY = "da_only"
    JOINT = "joint"
    SPEAKER_CONDITIONED = "conditional"


class DiscourseGrammar:
    """A trained discourse prior plus the tag set it scores.

    ``order`` 0 means "no grammar": uniform scores, no inner model.
    Scoring is memoized; instances are immutable after construction and safe
    to share across decodes.
    """

    def __init__(self, tagset: TagSet, variant: GrammarVariant, order: int,
                 model: NGramModel | None) -> None:
        if order < 0:
            raise ValueError("grammar order must be >= 0")
        if (order == 0) != (model is None):
            raise ValueError("order 0 iff no inner model")
        self.tagset = tagset
        self.variant = GrammarVariant(variant)
        self.order = order
        self.model = model
        self._trans_memo: dict[tuple, float] = {}
        self._norm_memo: dict[tuple, float] = {}
        if self.variant == GrammarVariant.JOINT:
            self._log_uniform = -math.log(2 * len(tagset.labels))
        else:
            self._log_uniform = -math.log(len(tagset.labels))

    @classmethod
    def uniform(cls, tagset: TagSet,
                variant: GrammarVariant = GrammarVariant.DA_ONLY) -> "DiscourseGrammar":
        """The no-grammar baseline: every event equally likely."""
        return cls(tagset, variant, 0, None)

    @property
    def labels(self) -> tuple[str, ...]:
        return self.tagset.labels

    def _token(self, label: str, speaker: str) -> str:
        if self.variant == GrammarVariant.DA_ONLY:
            return label
        return f"{label}{PAIR_SEP}{speaker}"

    def _context(self, history: Sequence[tuple[str, str]]) -> tuple[str, ...]:
        if self.order <= 1:
            return ()
        events = list(history)[-(self.order - 1):]
        toks = [self._token(lab, spk) for lab, spk in events]
        pad = self.order - 1 - len(toks)
        return tuple([START] * pad + toks)

    def transition_log_prob(self, history: Sequence[tuple[str, str]],
                            event: tuple[str, str]) -> float:
        """log P(event | history) under the grammar's view.

        ``history`` and ``event`` are (label, speaker) pairs; histories
        longer than order-1 are truncated, shorter ones padded with
        ``<start>``.
        """
        label, speaker = event
        if label not in self.tagset.labels:
            raise CorpusError(f"label {label!r} not in grammar tag set")
        if self.order == 0:
            return self._log_uniform
        ctx = self._context(history)
        key = (ctx, label, speaker)
        cached = self._trans_memo.get(key)
        if cached is not None:
            return cached
        lp = self.model.cond_log_prob(ctx, self._token(label, speaker))
        if self.variant == GrammarVariant.SPEAKER_CONDITIONED:
            lp -= self._speaker_normalizer(ctx, speaker)
        self._trans_memo[key] = lp
        return lp

    def _speaker_normalizer(self, ctx: tuple[str, ...], speaker: str) -> float:
        key = (ctx, speaker)
        cached = self._norm_memo.get(key)
        if cached is None:
            cached = log_sum(
                self.model.cond_log_prob(ctx, self._token(lab, speaker))
                for lab in self.tagset.labels)
            self._norm_memo[key] = cached
        return cached

    def end_log_prob(self, history: Sequence[tuple[str, str]]) -> float:
        """log P(<end> | history); the end event is speakerless, so it is
        never divided by a speaker normalizer."""
        if self.order == 0:
            return 0.0
        return self.model.cond_log_prob(self._context(history), END)


def _event_sequence(conv: Conversation, tagset: TagSet) -> list[tuple[str, str]]:
    events = []
    for utt in conv:
        if utt.da_label is None:
            raise CorpusError(f"conversation {conv.conv_id}: utterance "
                              f"{utt.index} is unlabeled")
        events.append((tagset.collapse(utt.da_label), utt.speaker))
    return events


def train_discourse(convs: Sequence[Conversation], tagset: TagSet,
                    order: int, variant: GrammarVariant) -> DiscourseGrammar:
    """Train a discourse grammar of the given order and view.

    Callers wanting speaker symmetry should pass a corpus already run
    through :func:`dialact.corpus.symmetrize_speakers`.
    """
    variant = GrammarVariant(variant)
    if order < 1:
        raise ValueError("train_discourse needs order >= 1; "
                         "use DiscourseGrammar.uniform for the no-grammar case")
    if not convs:
        raise ValueError("no training conversations")
    if variant == GrammarVariant.DA_ONLY:
        vocab = set(tagset.labels)
        seqs = [[lab for lab, _ in _event_sequence(c, tagset)] for c in convs]
    else:
        vocab = {f"{lab}{PAIR_SEP}{spk}"
                 for lab in tagset.labels for spk in ("A", "B")}
        seqs = [[f"{lab}{PAIR_SEP}{spk}" for lab, spk in _event_sequence(c, tagset)]
                for c in convs]
    model = train_ngram(seqs, order, vocabulary=vocab, pad=True)
    return DiscourseGrammar(tagset, variant, order, model)


def discourse_perplexity(grammar: DiscourseGrammar,
                         convs: Sequence[Conversation]) -> float:
    """Per-event perplexity of the grammar on labeled conversations.

    Trained grammars score n transitions plus the ``<end>`` event per
    conversation (n+1 events); an order-0 grammar scores n uniform events.
    """
    if not convs:
        raise ValueError("no conversations to evaluate")
    total = 0.0
    count = 0
    for conv in convs:
        events = _event_sequence(conv, grammar.tagset)
        if grammar.order == 0:
            total += len(events) * grammar._log_uniform
            count += len(events)
            continue
        for i, ev in enumerate(events):
            total += grammar.transition_log_prob(events[:i], ev)
        total += grammar.end_log_prob(events)
        count += len(events) + 1
    if count == 0:
        raise ValueError("no events to evaluate")
    return math.exp(-total / count)


def save_discourse(grammar: DiscourseGrammar, path: str | Path) -> None:
    """Write the inner model as ARPA with variant/order in a header comment."""
    if grammar.order == 0:
        raise ValueError("an order-0 grammar has no model to save")
    write_arpa(grammar.model, path,
               comments=[f"discourse grammar variant={grammar.variant.value} "
                         f"order={grammar.order}"])


def load_discourse(path: str | Path, tagset: TagSet) -> DiscourseGrammar:
    first = Path(path).read_text(encoding="utf-8").splitlines()[0]
    marker = "discourse grammar "
    if marker not in first:
        raise ValueError(f"{path}: missing discourse grammar header")
    fields = dict(kv.split("=") for kv in first.split(marker, 1)[1].split())
    variant = GrammarVariant(fields["variant"])
    order = int(fields["order"])
    model = read_arpa(path)
    if model.order != order:
        raise ValueError(f"{path}: header order {order} != model order {model.order}")
    return DiscourseGrammar(tagset, variant, order, model)
