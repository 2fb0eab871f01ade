"""Batch command-line frontend wiring the pipeline.

Subcommands
  train       estimate models from a labeled corpus into a model directory
  tag         predict a dialogue act per utterance, optionally fusing prosody
  rescore     pick n-best hypotheses per rescoring method and report WER
  perplexity  score a corpus under the trained models
  eval        compare a predictions file against reference labels

Model directory layout (written by train, read by everything else):
  manifest.tsv           kind, key, relative path per artifact
  tagset.txt             the label inventory
  discourse.arpa         the dialogue-act sequence prior
  da_lms/<label>.arpa    per-DA word models plus _fallback.arpa (pooled)
  da_lms_smoothed/...    the same models interpolated with the pooled one
  prosody.tree           decision tree (only when trained with --prosody)

Labels may contain characters unfit for filenames, so the manifest records
the label-to-filename mapping and loading never globs.  All randomness sits
behind --seed.  Reruns with identical inputs and flags produce byte-identical
outputs; rows are ordered by conversation id, then utterance index.  Exit
status: 0 on success, 1 on validation or I/O failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import contextlib
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (Conversation, CorpusError, TagSet, attach_nbest,
                     attach_prosody, default_tagset, load_tagset,
                     parse_conversations, parse_nbest, parse_prosody,
                     save_tagset, symmetrize_speakers)
from .discourse import (DiscourseGrammar, GrammarVariant, discourse_perplexity,
                        load_discourse, save_discourse, train_discourse)
from .hmm import (CombinationWeights, combine_likelihoods, forward_backward,
                  tune_alpha_beta, viterbi_decode)
from .metrics import tagging_accuracy
from .ngram import END, UNK, materialize, perplexity, read_arpa, write_arpa
from .prosody import (DecisionTree, TreeConfig, load_tree,
                      prosody_likelihood_tables, serialize_tree, train_tree)
from .rescore import METHODS, per_da_wer_report, rescore_corpus
from .wordmodels import (DaLmSet, MODES, ScoreScaling, smooth_da_lms,
                         train_da_lms, word_likelihood_tables)


# ---------------------------------------------------------------------------
# Model directory I/O
# ---------------------------------------------------------------------------

_FALLBACK_STEM = "_fallback"


@dataclass
class TrainedModels:
    tagset: TagSet
    grammar: DiscourseGrammar
    da_lms: DaLmSet
    smoothed: DaLmSet
    tree: DecisionTree | None


def _sanitize(label: str, used: set[str]) -> str:
    safe = "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in label)
    safe = safe or "_"
    stem, n = safe, 1
    while stem in used:
        n += 1
        stem = f"{safe}-{n}"
    used.add(stem)
    return stem


def save_models(directory: str | Path, tagset: TagSet,
                grammar: DiscourseGrammar, da_lms: DaLmSet, smoothed: DaLmSet,
                tree: DecisionTree | None) -> None:
    out = Path(directory)
    (out / "da_lms").mkdir(parents=True, exist_ok=True)
    (out / "da_lms_smoothed").mkdir(exist_ok=True)
    rows: list[tuple[str, str, str]] = []

    save_tagset(tagset, out / "tagset.txt")
    rows.append(("tagset", "-", "tagset.txt"))
    save_discourse(grammar, out / "discourse.arpa")
    rows.append(("discourse", "-", "discourse.arpa"))

    fallback_path = f"da_lms/{_FALLBACK_STEM}.arpa"
    write_arpa(da_lms.fallback, out / fallback_path)
    rows.append(("fallback", "-", fallback_path))

    used = {_FALLBACK_STEM}
    for lab in tagset.labels:
        stem = _sanitize(lab, used)
        model = da_lms.models[lab]
        if model is da_lms.fallback:
            # zero-count class: share the pooled file instead of duplicating
            rows.append(("da_lm", lab, fallback_path))
        else:
            path = f"da_lms/{stem}.arpa"
            write_arpa(model, out / path)
            rows.append(("da_lm", lab, path))
        smodel = smoothed.models[lab]
        if smodel is da_lms.fallback:
            rows.append(("da_lm_smoothed", lab, fallback_path))
        else:
            spath = f"da_lms_smoothed/{stem}.arpa"
            write_arpa(materialize(smodel), out / spath)
            rows.append(("da_lm_smoothed", lab, spath))

    if tree is not None:
        serialize_tree(tree, out / "prosody.tree")
        rows.append(("prosody", "-", "prosody.tree"))

    with open(out / "manifest.tsv", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write("\t".join(row) + "\n")


def load_models(directory: str | Path) -> TrainedModels:
    root = Path(directory)
    manifest = root / "manifest.tsv"
    if not manifest.is_file():
        raise CorpusError(f"{manifest}: not found (is this a model directory?)")
    rows: list[tuple[str, str, str]] = []
    for lineno, raw in enumerate(manifest.read_text(encoding="utf-8")
                                 .splitlines(), 1):
        if not raw.strip() or raw.startswith("#"):
            continue
        fields = raw.split("\t")
        if len(fields) != 3:
            raise CorpusError(f"{manifest}:{lineno}: expected 3 fields")
        rows.append((fields[0], fields[1], fields[2]))
    by_kind: dict[str, dict[str, str]] = {}
    for kind, key, path in rows:
        by_kind.setdefault(kind, {})[key] = path
    for kind in ("tagset", "discourse", "fallback"):
        if kind not in by_kind:
            raise CorpusError(f"{manifest}: missing {kind} entry")

    tagset = load_tagset(root / by_kind["tagset"]["-"])
    grammar = load_discourse(root / by_kind["discourse"]["-"], tagset)

    cache: dict[str, object] = {}

    def model_at(path: str):
        if path not in cache:
            cache[path] = read_arpa(root / path)
        return cache[path]

    fallback = model_at(by_kind["fallback"]["-"])
    sets = []
    for kind in ("da_lm", "da_lm_smoothed"):
        table = by_kind.get(kind, {})
        models = {}
        for lab in tagset.labels:
            if lab not in table:
                raise CorpusError(f"{manifest}: no {kind} entry for {lab!r}")
            models[lab] = model_at(table[lab])
        sets.append(DaLmSet(tagset, models, fallback, fallback.order,
                            frozenset(fallback.vocab) - {END, UNK}))
    tree = None
    if "prosody" in by_kind:
        tree = load_tree(root / by_kind["prosody"]["-"])
    return TrainedModels(tagset, grammar, sets[0], sets[1], tree)


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def _load_tagset(args) -> TagSet:
    return load_tagset(args.tagset) if args.tagset else default_tagset()


def _load_convs(args, tagset: TagSet) -> list[Conversation]:
    convs = parse_conversations(args.corpus, tagset)
    if not convs:
        raise CorpusError(f"{args.corpus}: no conversations")
    if getattr(args, "nbest", None):
        convs = attach_nbest(convs, parse_nbest(args.nbest, args.max_hyps))
    if getattr(args, "prosody", None):
        _, table = parse_prosody(args.prosody)
        convs = attach_prosody(convs, table)
    return convs


def _grammar_for(args, models: TrainedModels) -> DiscourseGrammar:
    if args.grammar == "none":
        return DiscourseGrammar.uniform(models.tagset, models.grammar.variant)
    return models.grammar


def _scaling(args) -> ScoreScaling:
    return ScoreScaling(args.lm_weight, args.word_penalty)


@contextlib.contextmanager
def _out_stream(path: str):
    if path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as fh:
            yield fh


def _g(x: float) -> str:
    return f"{x:.6g}"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    tagset = _load_tagset(args)
    convs = parse_conversations(args.corpus, tagset)
    if not convs:
        raise CorpusError(f"{args.corpus}: no conversations")
    for conv in convs:
        for utt in conv:
            if utt.da_label is None:
                raise CorpusError(f"{conv.conv_id}:{utt.index}: training "
                                  f"corpus has an unlabeled utterance")

    grammar_data = symmetrize_speakers(convs) if args.symmetrize else convs
    grammar = train_discourse(grammar_data, tagset, args.order,
                              GrammarVariant(args.variant))
    da_lms = train_da_lms(convs, tagset, order=args.word_order)

    if args.heldout:
        heldout = parse_conversations(args.heldout, tagset)
        smoothed, weights = smooth_da_lms(da_lms, heldout)
    else:
        print("note: no --heldout corpus; smoothing weights default to 0.5",
              file=sys.stderr)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            smoothed, weights = smooth_da_lms(da_lms, [])

    tree = None
    if args.prosody:
        schema, table = parse_prosody(args.prosody)
        with_feats = attach_prosody(convs, table)
        samples = [(u.prosody, tagset.collapse(u.da_label))
                   for conv in with_feats for u in conv
                   if u.prosody is not None]
        if not samples:
            raise CorpusError(f"{args.prosody}: no features match the corpus")
        tree = train_tree(schema, samples,
                          TreeConfig(args.min_leaf, args.max_depth),
                          classes=tagset.labels)

    save_models(args.models, tagset, grammar, da_lms, smoothed, tree)

    print(f"discourse_perplexity\t{_g(discourse_perplexity(grammar, convs))}")
    all_words = [u.words for conv in convs for u in conv]
    print(f"word_perplexity_baseline\t{_g(perplexity(da_lms.fallback, all_words))}")
    for lab in tagset.labels:
        print(f"smoothing_weight\t{lab}\t{_g(weights[lab])}")
    return 0


def cmd_tag(args) -> int:
    models = load_models(args.models)
    tagset = models.tagset
    convs = _load_convs(args, tagset)
    if args.mode != "true_words" and not args.nbest:
        raise CorpusError(f"mode {args.mode!r} needs an --nbest file")
    if args.online and args.decoder != "posterior":
        raise CorpusError("--online applies to the posterior decoder only")
    if args.tune_fusion and not args.prosody:
        raise CorpusError("--tune-fusion needs a --prosody file")

    grammar = _grammar_for(args, models)
    word_tables = word_likelihood_tables(models.da_lms, convs, args.mode,
                                         _scaling(args))
    tables = word_tables
    if args.prosody:
        if models.tree is None:
            raise CorpusError("model directory has no prosody tree")
        prosody_tables = prosody_likelihood_tables(models.tree, convs)
        if args.tune_fusion:
            refs = {}
            for conv in convs:
                if any(u.da_label is None for u in conv):
                    raise CorpusError(f"{conv.conv_id}: --tune-fusion needs "
                                      f"labels on every utterance")
                refs[conv.conv_id] = [tagset.collapse(u.da_label) for u in conv]
            result = tune_alpha_beta(grammar, word_tables, prosody_tables,
                                     refs, seed=args.seed)
            for half, (w, acc) in enumerate(zip(result.weights,
                                                result.half_accuracies)):
                print(f"fusion half {half + 1}: alpha={_g(w.alpha)} "
                      f"beta={_g(w.beta)} heldout accuracy {_g(100 * acc)}%",
                      file=sys.stderr)
            print(f"fusion pooled accuracy {_g(100 * result.accuracy)}%",
                  file=sys.stderr)
            weights = result.better
        else:
            weights = CombinationWeights(args.alpha, args.beta)
        tables = [combine_likelihoods(w, p, weights)
                  for w, p in zip(word_tables, prosody_tables)]

    predicted: dict[str, list[str]] = {}
    posteriors: dict[str, np.ndarray | None] = {}
    for table in tables:
        if args.decoder == "viterbi":
            labels, _ = viterbi_decode(grammar, table)
            posteriors[table.conversation_id] = None
        else:
            posts = forward_backward(grammar, table, online=args.online)
            labels = [table.labels[j] for j in np.argmax(posts, axis=1)]
            posteriors[table.conversation_id] = posts
        predicted[table.conversation_id] = list(labels)

    order = sorted(convs, key=lambda c: c.conv_id)
    with _out_stream(args.output) as fh:
        for conv in order:
            posts = posteriors[conv.conv_id]
            for utt in conv:
                lab = predicted[conv.conv_id][utt.index]
                idx = models.da_lms.labels.index(lab)
                post = "-" if posts is None else repr(float(posts[utt.index, idx]))
                fh.write(f"{conv.conv_id}\t{utt.index}\t{lab}\t{post}\n")

    pred_flat, ref_flat = [], []
    for conv in convs:
        for utt in conv:
            if utt.da_label is not None:
                pred_flat.append(predicted[conv.conv_id][utt.index])
                ref_flat.append(tagset.collapse(utt.da_label))
    if ref_flat:
        report = tagging_accuracy(pred_flat, ref_flat, labels=tagset.labels)
        stream = sys.stdout if args.output != "-" else sys.stderr
        stream.write(report.format())
    return 0


def cmd_rescore(args) -> int:
    models = load_models(args.models)
    convs = _load_convs(args, models.tagset)
    methods = args.methods.split(",")
    result = rescore_corpus(convs, _grammar_for(args, models), models.da_lms,
                            models.smoothed, methods, _scaling(args))
    if not result.references:
        raise CorpusError("no utterance has an n-best list")
    if result.skipped:
        print(f"note: {len(result.skipped)} utterances without n-best lists "
              f"were skipped", file=sys.stderr)

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for method in methods:
        chosen = result.methods[method].chosen
        with open(out / f"hyps_{method}.tsv", "w", encoding="utf-8") as fh:
            for key in sorted(chosen):
                fh.write(f"{key[0]}\t{key[1]}\t{' '.join(chosen[key])}\n")

    with open(out / "report.tsv", "w", encoding="utf-8") as fh:
        fh.write("method\twer\tsubstitutions\tinsertions\tdeletions\t"
                 "perplexity\n")
        for method in methods:
            r = result.methods[method]
            ppl = "n/a" if r.perplexity is None else _g(r.perplexity)
            fh.write(f"{method}\t{r.wer.rate!r}\t{r.wer.substitutions}\t"
                     f"{r.wer.insertions}\t{r.wer.deletions}\t{ppl}\n")
            print(f"{method}: WER {_g(100 * r.wer.rate)}%  perplexity {ppl}")

    if "baseline" in methods and "mixture_of_lms" in methods and result.labels:
        keys = set(result.labels)
        rows = per_da_wer_report(
            {k: result.references[k] for k in keys}, result.labels,
            {k: result.methods["baseline"].chosen[k] for k in keys},
            {k: result.methods["mixture_of_lms"].chosen[k] for k in keys})
        with open(out / "per_da.tsv", "w", encoding="utf-8") as fh:
            fh.write("label\tword_share\tbaseline_wer\tmixture_wer\tdelta\n")
            for row in rows:
                fh.write(f"{row['label']}\t{row['word_share']!r}\t"
                         f"{row['baseline_wer']!r}\t{row['method_wer']!r}\t"
                         f"{row['delta']!r}\n")
    return 0


def cmd_perplexity(args) -> int:
    models = load_models(args.models)
    convs = _load_convs(args, models.tagset)
    grammar = _grammar_for(args, models)
    print(f"discourse_perplexity\t{_g(discourse_perplexity(grammar, convs))}")
    if args.words:
        all_words = [u.words for conv in convs for u in conv]
        print(f"word_perplexity\t-\t"
              f"{_g(perplexity(models.da_lms.fallback, all_words))}")
        for lab in models.tagset.labels:
            seqs = [u.words for conv in convs for u in conv
                    if u.da_label is not None
                    and models.tagset.collapse(u.da_label) == lab]
            if seqs:
                print(f"word_perplexity\t{lab}\t"
                      f"{_g(perplexity(models.da_lms.models[lab], seqs))}")
    return 0


def cmd_eval(args) -> int:
    tagset = _load_tagset(args)
    convs = parse_conversations(args.reference, tagset)
    preds: dict[tuple[str, int], str] = {}
    for lineno, raw in enumerate(Path(args.predictions)
                                 .read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip() or raw.startswith("#"):
            continue
        fields = raw.split("\t")
        if len(fields) < 3:
            raise CorpusError(f"{args.predictions}:{lineno}: expected at "
                              f"least 3 fields")
        preds[(fields[0], int(fields[1]))] = fields[2]

    pred_flat, ref_flat = [], []
    for conv in convs:
        for utt in conv:
            if utt.da_label is None:
                continue
            key = (conv.conv_id, utt.index)
            if key not in preds:
                raise CorpusError(f"{args.predictions}: no prediction for "
                                  f"{key[0]}:{key[1]}")
            pred_flat.append(tagset.collapse(preds[key]))
            ref_flat.append(tagset.collapse(utt.da_label))
    if not ref_flat:
        raise CorpusError(f"{args.reference}: no labeled utterances")
    report = tagging_accuracy(pred_flat, ref_flat, labels=tagset.labels)
    sys.stdout.write(report.format())
    if args.tsv:
        Path(args.tsv).write_text(report.to_tsv(), encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dialact",
        description="Dialogue-act tagging and n-best rescoring.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="seed for all randomized steps (default 0)")
    common.add_argument("--tagset", help="label inventory file "
                        "(default: bundled 42-label set)")

    scoring = argparse.ArgumentParser(add_help=False)
    scoring.add_argument("--lm-weight", type=float, default=10.0,
                         help="recognizer LM weight lambda (default 10)")
    scoring.add_argument("--word-penalty", type=float, default=0.0,
                         help="recognizer insertion penalty mu (default 0)")
    scoring.add_argument("--max-hyps", type=int, default=None,
                         help="truncate n-best lists to this many hypotheses")
    scoring.add_argument("--grammar", choices=("trained", "none"),
                         default="trained",
                         help="'none' replaces the discourse prior with a "
                         "uniform one")

    p = sub.add_parser("train", parents=[common],
                       help="estimate models from a labeled corpus")
    p.add_argument("--corpus", required=True, help="labeled conversation file")
    p.add_argument("--models", required=True, help="output model directory")
    p.add_argument("--order", type=int, default=2,
                   help="discourse grammar n-gram order (default 2)")
    p.add_argument("--variant",
                   choices=tuple(v.value for v in GrammarVariant),
                   default=GrammarVariant.SPEAKER_CONDITIONED.value,
                   help="discourse grammar view (default conditional)")
    p.add_argument("--word-order", type=int, default=3,
                   help="per-DA word model order (default 3)")
    p.add_argument("--heldout",
                   help="held-out conversations for smoothing weights")
    p.add_argument("--symmetrize", action="store_true",
                   help="train the grammar on speaker-swapped copies too")
    p.add_argument("--prosody", help="prosodic feature file; trains a tree")
    p.add_argument("--min-leaf", type=int, default=10,
                   help="minimum tree leaf size (default 10)")
    p.add_argument("--max-depth", type=int, default=None,
                   help="maximum tree depth (default unlimited)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tag", parents=[common, scoring],
                       help="predict a dialogue act per utterance")
    p.add_argument("--models", required=True, help="trained model directory")
    p.add_argument("--corpus", required=True, help="conversation file")
    p.add_argument("--nbest", help="n-best file (modes nbest and one_best)")
    p.add_argument("--prosody", help="prosodic feature file for fusion")
    p.add_argument("--mode", choices=MODES, default="true_words",
                   help="word evidence source (default true_words)")
    p.add_argument("--decoder", choices=("posterior", "viterbi"),
                   default="posterior",
                   help="posterior (per-utterance argmax) or viterbi")
    p.add_argument("--online", action="store_true",
                   help="filtered posteriors: no look-ahead")
    p.add_argument("--alpha", type=float, default=1.0,
                   help="prosody stream weight (default 1)")
    p.add_argument("--beta", type=float, default=1.0,
                   help="evidence flattening weight (default 1)")
    p.add_argument("--tune-fusion", action="store_true",
                   help="jackknife-tune alpha and beta on the labels")
    p.add_argument("--output", default="-",
                   help="predictions file (default stdout)")
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("rescore", parents=[common, scoring],
                       help="rescore n-best lists and report WER")
    p.add_argument("--models", required=True, help="trained model directory")
    p.add_argument("--corpus", required=True,
                   help="conversation file with reference words")
    p.add_argument("--nbest", required=True, help="n-best file")
    p.add_argument("--methods", default=",".join(METHODS),
                   help="comma list of " + ", ".join(METHODS))
    p.add_argument("--output", required=True, help="output directory")
    p.set_defaults(func=cmd_rescore)

    p = sub.add_parser("perplexity", parents=[common, scoring],
                       help="score a corpus under the trained models")
    p.add_argument("--models", required=True, help="trained model directory")
    p.add_argument("--corpus", required=True, help="conversation file")
    p.add_argument("--nbest", help="n-best file (unused, accepted for "
                   "symmetry)")
    p.add_argument("--prosody", help="prosodic feature file (unused)")
    p.add_argument("--words", action="store_true",
                   help="also report word model perplexities")
    p.set_defaults(func=cmd_perplexity)

    p = sub.add_parser("eval", parents=[common],
                       help="compare predictions against reference labels")
    p.add_argument("--reference", required=True,
                   help="labeled conversation file")
    p.add_argument("--predictions", required=True,
                   help="tag output (conv, index, label columns)")
    p.add_argument("--tsv", help="also write the per-label report here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
