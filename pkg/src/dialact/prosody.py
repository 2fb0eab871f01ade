"""CART-style decision tree over prosodic features.

Greedy binary splits by Gini impurity decrease.  Continuous features split
at midpoints between adjacent distinct observed values; categorical
features split on category subsets.  Ties between equally good splits go to
the lowest feature index (schema order), then the lowest threshold (or the
earliest subset in enumeration order).  Samples with a missing value follow
the side that received the majority of the non-missing samples; the
direction is recorded on the node and reused at prediction time.

Leaves store class posteriors (training frequencies).  For use as HMM
evidence, posteriors are converted to scaled likelihoods P(F|U) ~ P(U|F) /
P(U) and a collapsed "rest" class hands its score to every member label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import FeatureSchema, FeatureVector, TagSet


class ProsodyError(ValueError):
    pass


@dataclass(frozen=True)
class TreeConfig:
    min_leaf: int = 1
    max_depth: int | None = None

    def __post_init__(self) -> None:
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


class Node:
    """Internal split node or leaf.

    A split holds either a threshold (continuous: value <= threshold goes
    left) or a category set (categorical: value in set goes left), plus the
    recorded direction for missing values.
    """

    __slots__ = ("feature", "threshold", "categories", "missing_left",
                 "left", "right", "posterior")

    def __init__(self, *, feature=None, threshold=None, categories=None,
                 missing_left=True, left=None, right=None, posterior=None):
        self.feature = feature
        self.threshold = threshold
        self.categories = categories
        self.missing_left = missing_left
        self.left = left
        self.right = right
        self.posterior = posterior

    @property
    def is_leaf(self) -> bool:
        return self.posterior is not None


@dataclass
class DecisionTree:
    classes: tuple[str, ...]
    schema: FeatureSchema
    root: Node
    training_priors: tuple[float, ...]

    def depth(self) -> int:
        def walk(node: Node) -> int:
            if node.is_leaf:
                return 0
            return 1 + max(walk(node.left), walk(node.right))
        return walk(self.root)

    def n_leaves(self) -> int:
        def walk(node: Node) -> int:
            if node.is_leaf:
                return 1
            return walk(node.left) + walk(node.right)
        return walk(self.root)


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


def _class_counts(labels: Sequence[int], n_classes: int) -> np.ndarray:
    counts = np.zeros(n_classes)
    for lab in labels:
        counts[lab] += 1
    return counts


def _best_split(samples, schema: FeatureSchema, n_classes: int,
                min_leaf: int):
    """Best (gain, feature, threshold/categories, missing_left, mask) or None.

    ``samples`` is a list of (FeatureVector, class index).  The returned mask
    holds True for samples routed left.
    """
    n = len(samples)
    parent_counts = _class_counts([c for _, c in samples], n_classes)
    parent_gini = _gini(parent_counts)
    best = None  # (gain, feature_index, threshold, categories, missing_left, mask)

    for fi, name in enumerate(schema.names):
        values = []
        missing_idx = []
        for si, (fv, _) in enumerate(samples):
            if name not in fv.values:
                raise ProsodyError(f"feature {name!r} missing from sample schema")
            v = fv.values[name]
            if v is None:
                missing_idx.append(si)
            else:
                values.append((si, v))
        if not values:
            continue
        if schema.kinds[fi] == "continuous":
            distinct = sorted({float(v) for _, v in values})
            candidates = [(lo + hi) / 2.0 for lo, hi in zip(distinct, distinct[1:])]
            tests = [("le", thr) for thr in candidates]
        else:
            cats = sorted({str(v) for _, v in values})
            if len(cats) < 2:
                continue
            # Enumerate subsets containing the first category: each
            # partition once, in a deterministic order.
            tests = []
            rest = cats[1:]
            for mask in range(0, 1 << len(rest)):
                subset = frozenset([cats[0]] + [c for b, c in enumerate(rest)
                                                if mask >> b & 1])
                if len(subset) < len(cats):
                    tests.append(("in", subset))

        for kind, test in tests:
            left = np.zeros(n, dtype=bool)
            n_left_known = n_right_known = 0
            for si, v in values:
                if (float(v) <= test) if kind == "le" else (str(v) in test):
                    left[si] = True
                    n_left_known += 1
                else:
                    n_right_known += 1
            missing_left = n_left_known >= n_right_known
            for si in missing_idx:
                left[si] = missing_left
            nl = int(left.sum())
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            lc = _class_counts([c for (fv, c), flag in zip(samples, left) if flag],
                               n_classes)
            rc = parent_counts - lc
            gain = parent_gini - (nl / n) * _gini(lc) - (nr / n) * _gini(rc)
            if gain > 1e-12 and (best is None or gain > best[0]):
                best = (gain, fi,
                        test if kind == "le" else None,
                        test if kind == "in" else None,
                        missing_left, left.copy())
    return best


def train_tree(schema: FeatureSchema,
               samples: Sequence[tuple[FeatureVector, str]],
               config: TreeConfig = TreeConfig(),
               classes: Sequence[str] | None = None) -> DecisionTree:
    """Grow a tree on (features, class label) pairs.

    ``classes`` fixes the class order (default: sorted unique labels).
    Growth stops at purity, when no split keeps ``min_leaf`` samples on both
    sides with positive Gini decrease, or at ``max_depth``.
    """
    if not samples:
        raise ProsodyError("no training samples")
    if classes is None:
        classes = tuple(sorted({lab for _, lab in samples}))
    else:
        classes = tuple(classes)
        stray = {lab for _, lab in samples} - set(classes)
        if stray:
            raise ProsodyError(f"sample labels outside class list: {sorted(stray)}")
    index = {lab: i for i, lab in enumerate(classes)}
    data = [(fv, index[lab]) for fv, lab in samples]

    def grow(node_samples, depth: int) -> Node:
        counts = _class_counts([c for _, c in node_samples], len(classes))
        pure = (counts > 0).sum() <= 1
        at_depth = config.max_depth is not None and depth >= config.max_depth
        if not pure and not at_depth and len(node_samples) >= 2 * config.min_leaf:
            found = _best_split(node_samples, schema, len(classes), config.min_leaf)
            if found is not None:
                _, fi, threshold, categories, missing_left, mask = found
                left = [s for s, flag in zip(node_samples, mask) if flag]
                right = [s for s, flag in zip(node_samples, mask) if not flag]
                return Node(feature=schema.names[fi], threshold=threshold,
                            categories=categories, missing_left=missing_left,
                            left=grow(left, depth + 1),
                            right=grow(right, depth + 1))
        return Node(posterior=tuple(float(x) for x in counts / counts.sum()))

    root = grow(data, 0)
    priors = _class_counts([c for _, c in data], len(classes)) / len(data)
    return DecisionTree(classes, schema, root, tuple(float(x) for x in priors))


def tree_posterior(tree: DecisionTree, fv: FeatureVector) -> np.ndarray:
    """Class posterior at the leaf this feature vector reaches."""
    node = tree.root
    while not node.is_leaf:
        if node.feature not in fv.values:
            raise ProsodyError(f"feature {node.feature!r} queried by the tree "
                               f"is absent from the probe's schema")
        v = fv.values[node.feature]
        if v is None:
            go_left = node.missing_left
        elif node.threshold is not None:
            go_left = float(v) <= node.threshold
        else:
            go_left = str(v) in node.categories
        node = node.left if go_left else node.right
    return np.array(node.posterior)


def tree_scaled_likelihood(tree: DecisionTree, fv: FeatureVector,
                           priors: Mapping[str, float],
                           tagset: TagSet) -> dict[str, float]:
    """Per-label scores proportional to P(features | label).

    Posterior over tree classes is divided by the given priors, collapsed
    classes hand their score to each member label, and the result is
    normalized to sum 1 over the tag set's expanded labels.
    """
    if set(tree.classes) != set(tagset.labels):
        raise ProsodyError("tree classes and tag set labels differ")
    for cls in tree.classes:
        if priors.get(cls, 0.0) <= 0.0:
            raise ProsodyError(f"prior for {cls!r} must be positive")
    post = tree_posterior(tree, fv)
    raw = {cls: float(p) / priors[cls] for cls, p in zip(tree.classes, post)}
    by_class = dict(tagset.collapsed)
    scores: dict[str, float] = {}
    for lab in tagset.labels:
        for target in by_class.get(lab, (lab,)):
            scores[target] = raw[lab]
    total = sum(scores.values())
    if total <= 0.0:
        raise ProsodyError("all scaled likelihoods are zero")
    return {lab: v / total for lab, v in scores.items()}


def prosody_likelihood_tables(tree: DecisionTree, convs,
                              priors: Sequence[float] | None = None) -> list:
    """Decoder evidence tables from the tree, one per conversation.

    Rows are log scaled likelihoods over the tree's classes, normalized to
    sum 1 before taking logs.  A class never seen in tree training (prior 0,
    hence posterior 0 everywhere) scores flat: the tree carries no evidence
    about it.  Utterances without features get a flat row too.
    """
    from .hmm import LikelihoodTable

    if priors is None:
        priors = tree.training_priors
    k = len(tree.classes)
    tables = []
    for conv in convs:
        scores = np.empty((len(conv), k))
        for i, utt in enumerate(conv):
            if utt.prosody is None:
                scores[i] = -math.log(k)
                continue
            post = tree_posterior(tree, utt.prosody)
            raw = np.array([p / pr if pr > 0.0 else 1.0
                            for p, pr in zip(post, priors)])
            total = raw.sum()
            if total <= 0.0:
                raise ProsodyError(f"{conv.conv_id}:{utt.index}: all scaled "
                                   f"likelihoods are zero")
            with np.errstate(divide="ignore"):
                scores[i] = np.log(raw / total)
        tables.append(LikelihoodTable(conv.conv_id, tree.classes,
                                      conv.speakers, scores,
                                      frozenset({"prosody"})))
    return tables


# ---------------------------------------------------------------------------
# Serialization: indented text, one node per line
# ---------------------------------------------------------------------------

def serialize_tree(tree: DecisionTree, path: str | Path) -> None:
    """Write the documented text format.

    Header lines name the classes, the schema, and the training priors; the
    body has one node per line, children indented two spaces, left child
    first.  Floats use repr, so reloading is exact.
    """
    lines = [
        "tree v1",
        "classes\t" + "\t".join(tree.classes),
        "features\t" + "\t".join(f"{n}:{k}" for n, k in
                                 zip(tree.schema.names, tree.schema.kinds)),
        "priors\t" + "\t".join(repr(p) for p in tree.training_priors),
    ]

    def emit(node: Node, depth: int) -> None:
        pad = "  " * depth
        if node.is_leaf:
            lines.append(pad + "leaf\t" + "\t".join(repr(p) for p in node.posterior))
            return
        miss = "left" if node.missing_left else "right"
        if node.threshold is not None:
            lines.append(f"{pad}node\t{node.feature}\t<=\t{node.threshold!r}"
                         f"\tmissing={miss}")
        else:
            cats = ",".join(sorted(node.categories))
            lines.append(f"{pad}node\t{node.feature}\tin\t{cats}\tmissing={miss}")
        emit(node.left, depth + 1)
        emit(node.right, depth + 1)

    emit(tree.root, 0)
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_tree(path: str | Path) -> DecisionTree:
    lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines()
             if l.strip()]
    if not lines or lines[0].strip() != "tree v1":
        raise ProsodyError(f"{path}: not a tree file")
    header: dict[str, list[str]] = {}
    body_start = 1
    for line in lines[1:]:
        fields = line.split("\t")
        if fields[0] in ("classes", "features", "priors"):
            header[fields[0]] = fields[1:]
            body_start += 1
        else:
            break
    for key in ("classes", "features", "priors"):
        if key not in header:
            raise ProsodyError(f"{path}: missing {key} header")
    classes = tuple(header["classes"])
    names, kinds = zip(*(f.rsplit(":", 1) for f in header["features"]))
    schema = FeatureSchema(tuple(names), tuple(kinds))
    priors = tuple(float(p) for p in header["priors"])

    body = lines[body_start:]
    pos = 0

    def parse(depth: int) -> Node:
        nonlocal pos
        if pos >= len(body):
            raise ProsodyError(f"{path}: truncated tree body")
        line = body[pos]
        indent = (len(line) - len(line.lstrip(" "))) // 2
        if indent != depth:
            raise ProsodyError(f"{path}: bad indentation at line {pos}")
        fields = line.strip().split("\t")
        pos += 1
        if fields[0] == "leaf":
            return Node(posterior=tuple(float(p) for p in fields[1:]))
        if fields[0] != "node" or len(fields) != 5:
            raise ProsodyError(f"{path}: bad node line {line!r}")
        _, feature, op, arg, miss = fields
        missing_left = miss == "missing=left"
        if op == "<=":
            node = Node(feature=feature, threshold=float(arg),
                        missing_left=missing_left)
        elif op == "in":
            node = Node(feature=feature, categories=frozenset(arg.split(",")),
                        missing_left=missing_left)
        else:
            raise ProsodyError(f"{path}: unknown test {op!r}")
        node.left = parse(depth + 1)
        node.right = parse(depth + 1)
        return node

    root = parse(0)
    if pos != len(body):
        raise ProsodyError(f"{path}: trailing tree lines")
    return DecisionTree(classes, schema, root, priors)
