"""Evaluation: tagging accuracy, chance baseline, confusion matrices, and
the balanced two-class subtask harness.

Accuracy is per-utterance exact match on collapsed labels.  Chance is the
relative frequency of the most frequent reference label, the floor any
constant predictor reaches.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import (CorpusError, FeatureSchema, FeatureVector, TagSet,
                     Utterance, downsample_uniform, jackknife_split)
from .ngram import sequence_log_prob, train_ngram
from .prosody import TreeConfig, train_tree, tree_posterior


@dataclass(eq=False)
class EvalReport:
    """Confusion counts with reference labels on rows, predictions on
    columns."""

    labels: tuple[str, ...]
    confusion: np.ndarray

    def __post_init__(self) -> None:
        k = len(self.labels)
        self.confusion = np.asarray(self.confusion, dtype=int)
        if self.confusion.shape != (k, k):
            raise ValueError("confusion matrix shape does not match labels")
        if self.total == 0:
            raise ValueError("empty report")

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion)) / self.total

    @property
    def chance(self) -> float:
        return float(self.confusion.sum(axis=1).max()) / self.total

    def reference_count(self, label: str) -> int:
        return int(self.confusion[self.labels.index(label)].sum())

    def precision(self, label: str) -> float:
        i = self.labels.index(label)
        predicted = self.confusion[:, i].sum()
        return float(self.confusion[i, i] / predicted) if predicted else math.nan

    def recall(self, label: str) -> float:
        i = self.labels.index(label)
        referenced = self.confusion[i].sum()
        return float(self.confusion[i, i] / referenced) if referenced else math.nan

    def to_tsv(self) -> str:
        lines = ["\t".join(["label", "count", "precision", "recall"])]
        for lab in self.labels:
            lines.append("\t".join([
                lab, str(self.reference_count(lab)),
                f"{self.precision(lab):.4f}", f"{self.recall(lab):.4f}"]))
        return "\n".join(lines) + "\n"

    def format(self) -> str:
        lines = [f"accuracy {100.0 * self.accuracy:.2f}%  "
                 f"(chance {100.0 * self.chance:.2f}%, n={self.total})"]
        width = max(len(lab) for lab in self.labels)
        for lab in self.labels:
            if self.reference_count(lab) == 0 and self.confusion[
                    :, self.labels.index(lab)].sum() == 0:
                continue
            lines.append(f"  {lab:<{width}}  n={self.reference_count(lab):<6d}"
                         f"precision {_pct(self.precision(lab))}  "
                         f"recall {_pct(self.recall(lab))}")
        return "\n".join(lines) + "\n"


def _pct(x: float) -> str:
    return "   n/a" if math.isnan(x) else f"{100.0 * x:5.1f}%"


def tagging_accuracy(predicted: Sequence[str], reference: Sequence[str],
                     labels: Sequence[str] | None = None) -> EvalReport:
    """Exact-match report for aligned label sequences."""
    if len(predicted) != len(reference):
        raise ValueError(f"length mismatch: {len(predicted)} predictions for "
                         f"{len(reference)} references")
    if not reference:
        raise ValueError("empty label sequences")
    if labels is None:
        labels = sorted(set(reference) | set(predicted))
    labels = tuple(labels)
    index = {lab: i for i, lab in enumerate(labels)}
    for lab in list(predicted) + list(reference):
        if lab not in index:
            raise ValueError(f"label {lab!r} not in report label set")
    confusion = np.zeros((len(labels), len(labels)), dtype=int)
    for pred, ref in zip(predicted, reference):
        confusion[index[ref], index[pred]] += 1
    return EvalReport(labels, confusion)


# ---------------------------------------------------------------------------
# Balanced two-class subtask
# ---------------------------------------------------------------------------

CLASSIFIERS = ("words", "prosody", "combined")


def focused_binary_task(utterances: Sequence[Utterance], tagset: TagSet,
                        pair: tuple[str, str],
                        classifiers: Sequence[str] = CLASSIFIERS,
                        seed: int = 0, order: int = 3,
                        config: TreeConfig = TreeConfig(min_leaf=5),
                        schema: FeatureSchema | None = None
                        ) -> dict[str, float]:
    """Train and score classifiers on a balanced two-class subset.

    The labeled utterances are downsampled so both classes are equally
    frequent (chance 50%), split in half per class, and each requested
    classifier is trained on one half and scored on the other with uniform
    class priors.  The combined classifier adds word and prosody log scores
    with unit weight.  Returns accuracy per classifier plus the test-set
    ``chance`` rate.
    """
    for c in classifiers:
        if c not in CLASSIFIERS:
            raise ValueError(f"unknown classifier {c!r}")
    if len(pair) != 2 or pair[0] == pair[1]:
        raise ValueError("pair must name two distinct classes")
    need_prosody = "prosody" in classifiers or "combined" in classifiers
    need_words = "words" in classifiers or "combined" in classifiers

    pool = []
    for utt in utterances:
        if utt.da_label is None:
            continue
        lab = tagset.collapse(utt.da_label)
        if lab not in pair:
            continue
        if need_prosody and utt.prosody is None:
            continue
        pool.append(dataclasses.replace(utt, da_label=lab))
    sample = downsample_uniform(pool, pair, seed)

    train: list[Utterance] = []
    test: list[Utterance] = []
    for lab in pair:
        cls_items = [u for u in sample if u.da_label == lab]
        if len(cls_items) < 2:
            raise CorpusError(f"class {lab!r}: need at least 2 utterances, "
                              f"have {len(cls_items)}")
        half_a, half_b = jackknife_split(cls_items, seed)
        train.extend(half_a)
        test.extend(half_b)

    word_models = {}
    if need_words:
        vocab = sorted({w for u in train for w in u.words})
        if not vocab:
            raise CorpusError("no training words for the word classifier")
        for lab in pair:
            word_models[lab] = train_ngram(
                [u.words for u in train if u.da_label == lab], order,
                vocabulary=vocab)

    tree = None
    if need_prosody:
        if schema is None:
            schema = _infer_schema(u.prosody for u in train)
        tree = train_tree(schema, [(u.prosody, u.da_label) for u in train],
                          config, classes=pair)

    def word_score(utt: Utterance, lab: str) -> float:
        return sequence_log_prob(word_models[lab], utt.words)

    def prosody_score(utt: Utterance, lab: str) -> float:
        # uniform prior: divide the leaf posterior by the training prior
        post = tree_posterior(tree, utt.prosody)
        i = tree.classes.index(lab)
        p = post[i] / tree.training_priors[i]
        return math.log(p) if p > 0.0 else -math.inf

    scorers = {
        "words": word_score,
        "prosody": prosody_score,
        "combined": lambda utt, lab: word_score(utt, lab) + prosody_score(utt, lab),
    }

    out: dict[str, float] = {}
    for name in classifiers:
        correct = 0
        for utt in test:
            best = pair[0]
            if scorers[name](utt, pair[1]) > scorers[name](utt, best):
                best = pair[1]
            correct += best == utt.da_label
        out[name] = correct / len(test)
    counts = [sum(u.da_label == lab for u in test) for lab in pair]
    out["chance"] = max(counts) / len(test)
    return out


def _infer_schema(vectors) -> FeatureSchema:
    names: list[str] = []
    categorical: set[str] = set()
    for fv in vectors:
        for name, value in fv.values.items():
            if name not in names:
                names.append(name)
            if isinstance(value, str):
                categorical.add(name)
    if not names:
        raise CorpusError("no prosodic features present")
    kinds = tuple("categorical" if n in categorical else "continuous"
                  for n in names)
    return FeatureSchema(tuple(names), kinds)
