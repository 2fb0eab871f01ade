"""Conversation-level decoding of dialogue acts.

The hidden state sequence is the DA labels; speakers are observed and
clamped, so a state history is a label tuple and the speakers come from the
conversation.  Any object with ``labels``, ``order``,
``transition_log_prob(history, event)`` and ``end_log_prob(history)`` works
as the prior (see :class:`dialact.discourse.DiscourseGrammar`), where
``history``/``event`` hold (label, speaker) pairs.

Evidence enters through :class:`LikelihoodTable`: per-utterance natural-log
likelihoods, one column per label.  Decoders:

  viterbi_decode      most probable label sequence (ties: lowest label
                      index at each backtrace step)
  forward_backward    per-utterance posteriors; ``online=True`` restricts
                      to forward-only (filtered) posteriors
  brute_force_decode  exhaustive reference implementation for small cases

Everything is computed in log space; conversations of 10^4 utterances
decode without underflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Conversation, jackknife_split
from .ngram import log_sum


@dataclass
class LikelihoodTable:
    """Per-utterance x per-label log evidence for one conversation.

    ``scores[i, j]`` is log P(evidence_i | label_j); entries are finite or
    -inf.  ``sources`` records which evidence streams went in.
    """

    conversation_id: str
    labels: tuple[str, ...]
    speakers: tuple[str, ...]
    scores: np.ndarray
    sources: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=float)
        n = len(self.speakers)
        if self.scores.shape != (n, len(self.labels)):
            raise ValueError(f"scores shape {self.scores.shape}, expected "
                             f"({n}, {len(self.labels)})")
        if np.isnan(self.scores).any() or (self.scores == np.inf).any():
            raise ValueError("likelihood entries must be finite or -inf")

    def __len__(self) -> int:
        return len(self.speakers)

    @classmethod
    def from_rows(cls, conversation_id: str, labels: Sequence[str],
                  speakers: Sequence[str],
                  rows: Sequence[Mapping[str, float]],
                  sources: frozenset[str] = frozenset()) -> "LikelihoodTable":
        scores = np.array([[row[lab] for lab in labels] for row in rows],
                          dtype=float).reshape(len(rows), len(labels))
        return cls(conversation_id, tuple(labels), tuple(speakers), scores, sources)


def dump_likelihoods(tables: Sequence[LikelihoodTable], path: str | Path) -> None:
    """TSV export (conv, index, label, loglik), for cross-implementation checks."""
    with open(path, "w", encoding="utf-8") as fh:
        for table in tables:
            for i in range(len(table)):
                for j, lab in enumerate(table.labels):
                    # repr of a Python float round-trips exactly
                    fh.write(f"{table.conversation_id}\t{i}\t{lab}\t"
                             f"{float(table.scores[i, j])!r}\n")


def load_likelihoods(path: str | Path, convs: Sequence[Conversation],
                     labels: Sequence[str]) -> list[LikelihoodTable]:
    """Rebuild tables from a TSV dump; ``convs`` supplies the speakers."""
    data: dict[str, dict[tuple[int, str], float]] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if not raw.strip() or raw.startswith("#"):
            continue
        conv_id, idx_s, lab, val = raw.split("\t")
        data.setdefault(conv_id, {})[(int(idx_s), lab)] = float(val)
    labels = tuple(labels)
    out = []
    for conv in convs:
        entries = data.get(conv.conv_id)
        if entries is None:
            raise ValueError(f"no likelihood rows for conversation {conv.conv_id}")
        scores = np.array([[entries[(i, lab)] for lab in labels]
                           for i in range(len(conv))])
        out.append(LikelihoodTable(conv.conv_id, labels, conv.speakers, scores))
    return out


# ---------------------------------------------------------------------------
# Evidence combination
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CombinationWeights:
    """Stream fusion weights: entry = beta * (word + alpha * prosody)."""

    alpha: float
    beta: float = 1.0

    def __post_init__(self) -> None:
        if self.alpha < 0.0:
            raise ValueError("alpha must be >= 0")
        if self.beta <= 0.0:
            raise ValueError("beta must be > 0")


def combine_likelihoods(word: LikelihoodTable,
                        prosody: LikelihoodTable | None,
                        weights: CombinationWeights) -> LikelihoodTable:
    """Fuse word and prosody evidence for one conversation."""
    if prosody is None or weights.alpha == 0.0:
        scores = weights.beta * word.scores
        sources = word.sources | {"combined"}
    else:
        for attr in ("conversation_id", "labels", "speakers"):
            if getattr(word, attr) != getattr(prosody, attr):
                raise ValueError(f"word/prosody tables disagree on {attr}")
        scores = weights.beta * (word.scores + weights.alpha * prosody.scores)
        sources = word.sources | prosody.sources | {"combined"}
    return LikelihoodTable(word.conversation_id, word.labels, word.speakers,
                           scores, frozenset(sources))


# ---------------------------------------------------------------------------
# Decoders
# ---------------------------------------------------------------------------

def _logsumexp(arr: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(arr, axis=axis)
    safe = np.where(m == -np.inf, 0.0, m)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.sum(np.exp(arr - np.expand_dims(safe, axis)),
                                   axis=axis))
    return np.where(m == -np.inf, -np.inf, out)


def _check_inputs(grammar, table: LikelihoodTable) -> None:
    if tuple(grammar.labels) != tuple(table.labels):
        raise ValueError("grammar and likelihood table label sets differ")
    if len(table) == 0:
        raise ValueError("empty conversation")


def _start_vector(grammar, table: LikelihoodTable) -> np.ndarray:
    return np.array([grammar.transition_log_prob((), (lab, table.speakers[0]))
                     for lab in table.labels])


def _prior_vector(grammar, table: LikelihoodTable, i: int) -> np.ndarray:
    # For order <= 1 the history never matters.
    return np.array([grammar.transition_log_prob((), (lab, table.speakers[i]))
                     for lab in table.labels])


class _StepMatrices:
    """Per-conversation cache of order-2 transition matrices by speaker pair."""

    def __init__(self, grammar, table: LikelihoodTable) -> None:
        self.grammar = grammar
        self.table = table
        self._cache: dict[tuple[str, str], np.ndarray] = {}

    def at(self, i: int) -> np.ndarray:
        key = (self.table.speakers[i - 1], self.table.speakers[i])
        mat = self._cache.get(key)
        if mat is None:
            labels = self.table.labels
            mat = np.empty((len(labels), len(labels)))
            for p, prev in enumerate(labels):
                hist = ((prev, key[0]),)
                for c, cur in enumerate(labels):
                    mat[p, c] = self.grammar.transition_log_prob(hist, (cur, key[1]))
            self._cache[key] = mat
        return mat


def _events_for(table: LikelihoodTable, hist: tuple[int, ...],
                next_pos: int) -> tuple[tuple[str, str], ...]:
    # hist holds label indices for utterances next_pos-len(hist) .. next_pos-1
    base = next_pos - len(hist)
    return tuple((table.labels[d], table.speakers[base + j])
                 for j, d in enumerate(hist))


def viterbi_decode(grammar, table: LikelihoodTable) -> tuple[list[str], float]:
    """Most probable label sequence and its log joint score.

    The joint includes prior transitions, the end-of-conversation term, and
    the evidence log likelihoods.
    """
    _check_inputs(grammar, table)
    n, t = table.scores.shape
    lik = table.scores
    if grammar.order <= 1:
        # No usable history: decode each utterance independently.  The end
        # term is history-independent at these orders, a plain constant.
        rows = np.vstack([_prior_vector(grammar, table, i) + lik[i]
                          for i in range(n)])
        if np.max(rows, axis=1).min() == -np.inf:
            raise ValueError("utterance with no admissible label")
        picks = np.argmax(rows, axis=1)
        score = float(rows[np.arange(n), picks].sum()) + grammar.end_log_prob(())
        return [table.labels[j] for j in picks], score
    if grammar.order == 2:
        return _viterbi_bigram(grammar, table)
    return _viterbi_general(grammar, table)


def _viterbi_bigram(grammar, table: LikelihoodTable) -> tuple[list[str], float]:
    n, t = table.scores.shape
    lik = table.scores
    steps = _StepMatrices(grammar, table)
    score = _start_vector(grammar, table) + lik[0]
    back = np.zeros((n, t), dtype=int)
    for i in range(1, n):
        if np.max(score) == -np.inf:
            raise ValueError(f"utterance {i - 1}: no admissible label")
        cand = score[:, None] + steps.at(i)
        back[i] = np.argmax(cand, axis=0)
        score = cand[back[i], np.arange(t)] + lik[i]
    end = np.array([grammar.end_log_prob(((lab, table.speakers[n - 1]),))
                    for lab in table.labels])
    score = score + end
    if np.max(score) == -np.inf:
        raise ValueError(f"utterance {n - 1}: no admissible label")
    last = int(np.argmax(score))
    total = float(score[last])
    seq = [last]
    for i in range(n - 1, 0, -1):
        last = int(back[i][last])
        seq.append(last)
    seq.reverse()
    return [table.labels[j] for j in seq], total


def _viterbi_general(grammar, table: LikelihoodTable) -> tuple[list[str], float]:
    n, t = table.scores.shape
    lik = table.scores
    m = grammar.order - 1
    states: dict[tuple[int, ...], float] = {(): 0.0}
    parents: list[dict[tuple[int, ...], tuple[tuple[int, ...], int]]] = []
    for i in range(n):
        new: dict[tuple[int, ...], float] = {}
        par: dict[tuple[int, ...], tuple[tuple[int, ...], int]] = {}
        for hist in sorted(states):
            s = states[hist]
            if s == -np.inf:
                continue
            ev_hist = _events_for(table, hist, i)
            for d in range(t):
                val = s + grammar.transition_log_prob(
                    ev_hist, (table.labels[d], table.speakers[i])) + lik[i, d]
                if val == -np.inf:
                    continue
                nh = (hist + (d,))[-m:]
                if nh not in new or val > new[nh]:
                    new[nh] = val
                    par[nh] = (hist, d)
        if not new:
            raise ValueError(f"utterance {i}: no admissible label")
        states = new
        parents.append(par)
    best_hist: tuple[int, ...] | None = None
    best = -np.inf
    for hist in sorted(states):
        val = states[hist] + grammar.end_log_prob(_events_for(table, hist, n))
        if val > best:
            best, best_hist = val, hist
    if best_hist is None:
        raise ValueError("no admissible label sequence")
    seq = []
    state = best_hist
    for i in range(n - 1, -1, -1):
        prev, d = parents[i][state]
        seq.append(d)
        state = prev
    seq.reverse()
    return [table.labels[j] for j in seq], float(best)


def forward_backward(grammar, table: LikelihoodTable,
                     online: bool = False) -> np.ndarray:
    """Per-utterance posterior label probabilities, rows summing to 1.

    ``online=True`` uses only evidence up to each utterance (forward pass,
    no end-of-conversation term): filtered rather than smoothed posteriors.
    """
    _check_inputs(grammar, table)
    n, t = table.scores.shape
    lik = table.scores
    if grammar.order <= 1:
        rows = np.vstack([_prior_vector(grammar, table, i) + lik[i]
                          for i in range(n)])
        return _normalize_rows(rows)
    if grammar.order == 2:
        return _forward_backward_bigram(grammar, table, online)
    return _forward_backward_general(grammar, table, online)


def _normalize_rows(rows: np.ndarray) -> np.ndarray:
    z = _logsumexp(rows, axis=1)
    if (z == -np.inf).any():
        raise ValueError("utterance with no admissible label")
    return np.exp(rows - z[:, None])


def _forward_backward_bigram(grammar, table: LikelihoodTable,
                             online: bool) -> np.ndarray:
    n, t = table.scores.shape
    lik = table.scores
    steps = _StepMatrices(grammar, table)
    alpha = np.empty((n, t))
    alpha[0] = _start_vector(grammar, table) + lik[0]
    for i in range(1, n):
        alpha[i] = _logsumexp(alpha[i - 1][:, None] + steps.at(i), axis=0) + lik[i]
    if online:
        return _normalize_rows(alpha)
    beta = np.empty((n, t))
    beta[n - 1] = np.array([grammar.end_log_prob(((lab, table.speakers[n - 1]),))
                            for lab in table.labels])
    for i in range(n - 2, -1, -1):
        beta[i] = _logsumexp(steps.at(i + 1) + (lik[i + 1] + beta[i + 1])[None, :],
                             axis=1)
    return _normalize_rows(alpha + beta)


def _forward_backward_general(grammar, table: LikelihoodTable,
                              online: bool) -> np.ndarray:
    n, t = table.scores.shape
    lik = table.scores
    m = grammar.order - 1
    forward: list[dict[tuple[int, ...], float]] = []
    cur: dict[tuple[int, ...], float] = {(): 0.0}
    for i in range(n):
        gather: dict[tuple[int, ...], list[float]] = {}
        for hist, s in cur.items():
            if s == -np.inf:
                continue
            ev_hist = _events_for(table, hist, i)
            for d in range(t):
                val = s + grammar.transition_log_prob(
                    ev_hist, (table.labels[d], table.speakers[i])) + lik[i, d]
                if val == -np.inf:
                    continue
                gather.setdefault((hist + (d,))[-m:], []).append(val)
        if not gather:
            raise ValueError(f"utterance {i}: no admissible label")
        cur = {h: log_sum(v) for h, v in gather.items()}
        forward.append(cur)

    posts = np.full((n, t), -np.inf)
    if online:
        for i in range(n):
            for hist, s in forward[i].items():
                d = hist[-1]
                posts[i, d] = np.logaddexp(posts[i, d], s)
        return _normalize_rows(posts)

    backward: list[dict[tuple[int, ...], float] | None] = [None] * n
    backward[n - 1] = {hist: grammar.end_log_prob(_events_for(table, hist, n))
                       for hist in forward[n - 1]}
    for i in range(n - 2, -1, -1):
        cur_b: dict[tuple[int, ...], float] = {}
        nxt = backward[i + 1]
        for hist in forward[i]:
            ev_hist = _events_for(table, hist, i + 1)
            vals = []
            for d in range(t):
                nh = (hist + (d,))[-m:]
                b = nxt.get(nh)
                if b is None or b == -np.inf:
                    continue
                vals.append(grammar.transition_log_prob(
                    ev_hist, (table.labels[d], table.speakers[i + 1]))
                    + lik[i + 1, d] + b)
            cur_b[hist] = log_sum(vals)
        backward[i] = cur_b

    for i in range(n):
        for hist, s in forward[i].items():
            total = s + backward[i][hist]
            d = hist[-1]
            posts[i, d] = np.logaddexp(posts[i, d], total)
    return _normalize_rows(posts)


def brute_force_decode(grammar, table: LikelihoodTable,
                       limit: int = 1_000_000) -> tuple[list[str], float, np.ndarray]:
    """Exhaustive decode: enumerate all label sequences.

    Returns (best sequence, its log joint score, posterior table).  Guarded
    by ``limit`` on the number of sequences; intended as a test oracle.
    """
    _check_inputs(grammar, table)
    n, t = table.scores.shape
    if t ** n > limit:
        raise ValueError(f"{t}^{n} sequences exceed the enumeration limit")
    lik = table.scores
    labels = table.labels
    speakers = table.speakers
    joint = np.empty(t ** n)
    pos = 0
    events: list[tuple[str, str]] = []

    def descend(i: int, score: float) -> None:
        nonlocal pos
        if i == n:
            joint[pos] = score + grammar.end_log_prob(events)
            pos += 1
            return
        for d in range(t):
            tr = grammar.transition_log_prob(events, (labels[d], speakers[i]))
            events.append((labels[d], speakers[i]))
            descend(i + 1, score + tr + lik[i, d])
            events.pop()

    descend(0, 0.0)

    best_flat = int(np.argmax(joint))  # first maximum = lexicographically least
    best_seq = np.unravel_index(best_flat, (t,) * n)
    grid = joint.reshape((t,) * n)
    total = _logsumexp(joint, axis=0)
    posts = np.empty((n, t))
    for i in range(n):
        margin = grid
        for axis in range(n - 1, -1, -1):
            if axis != i:
                margin = _logsumexp(margin, axis=axis)
        posts[i] = np.exp(margin - total)
    return [labels[d] for d in best_seq], float(joint[best_flat]), posts


# ---------------------------------------------------------------------------
# Fusion weight tuning
# ---------------------------------------------------------------------------

DEFAULT_ALPHAS = tuple(round(0.1 * i, 10) for i in range(0, 21))
DEFAULT_BETAS = tuple(round(0.1 * i, 10) for i in range(1, 21))


@dataclass(frozen=True)
class JackknifeResult:
    """Twofold jackknife outcome: per-half best weights and pooled accuracy."""

    weights: tuple[CombinationWeights, CombinationWeights]
    accuracy: float
    half_accuracies: tuple[float, float]

    @property
    def better(self) -> CombinationWeights:
        """Weights from the half that generalized better (ties: first half)."""
        return self.weights[0] if self.half_accuracies[0] >= self.half_accuracies[1] \
            else self.weights[1]


def _decode_accuracy(grammar, word_tables, prosody_tables, references,
                     weights: CombinationWeights) -> tuple[int, int]:
    correct = total = 0
    for wt, pt in zip(word_tables, prosody_tables):
        combined = combine_likelihoods(wt, pt, weights)
        posts = forward_backward(grammar, combined)
        picks = np.argmax(posts, axis=1)
        ref = references[wt.conversation_id]
        for i, j in enumerate(picks):
            total += 1
            if wt.labels[j] == ref[i]:
                correct += 1
    return correct, total


def tune_alpha_beta(grammar,
                    word_tables: Sequence[LikelihoodTable],
                    prosody_tables: Sequence[LikelihoodTable | None],
                    references: Mapping[str, Sequence[str]],
                    alphas: Sequence[float] = DEFAULT_ALPHAS,
                    betas: Sequence[float] = DEFAULT_BETAS,
                    seed: int = 0) -> JackknifeResult:
    """Grid-search fusion weights by twofold jackknife.

    Conversations are split in two seeded halves; each half's best
    (alpha, beta) on the grid is evaluated on the other half, and the pooled
    accuracy over both evaluations is reported.  Grid ties resolve to the
    smallest alpha, then the smallest beta.
    """
    if len(word_tables) != len(prosody_tables):
        raise ValueError("word/prosody table lists differ in length")
    if len(word_tables) < 2:
        raise ValueError("need at least two conversations to jackknife")
    pairs = list(zip(word_tables, prosody_tables))
    half1, half2 = jackknife_split(pairs, seed)

    def best_on(half) -> CombinationWeights:
        wts = [p[0] for p in half]
        pts = [p[1] for p in half]
        best_w, best_acc = None, -1.0
        for a in alphas:
            for b in betas:
                w = CombinationWeights(a, b)
                c, tot = _decode_accuracy(grammar, wts, pts, references, w)
                acc = c / tot
                if acc > best_acc:
                    best_w, best_acc = w, acc
        return best_w

    w1 = best_on(half1)
    w2 = best_on(half2)
    c2, t2 = _decode_accuracy(grammar, [p[0] for p in half2],
                              [p[1] for p in half2], references, w1)
    c1, t1 = _decode_accuracy(grammar, [p[0] for p in half1],
                              [p[1] for p in half1], references, w2)
    return JackknifeResult(
        weights=(w1, w2),
        accuracy=(c1 + c2) / (t1 + t2),
        half_accuracies=(c2 / t2, c1 / t1),
    )
