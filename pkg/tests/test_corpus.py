"""Corpus data model, file formats, and sampling helpers."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialact.corpus import (Conversation, CorpusError, FeatureSchema,
                            FeatureVector, Hypothesis, NBestList, TagSet,
                            Utterance, attach_nbest, attach_prosody,
                            default_tagset, downsample_uniform,
                            jackknife_split, load_tagset,
                            parse_conversations, parse_nbest, parse_prosody,
                            save_tagset, serialize_conversations,
                            serialize_nbest, serialize_prosody,
                            symmetrize_speakers)


def mk_conv(conv_id, rows):
    return Conversation(conv_id, tuple(
        Utterance(i, spk, lab, tuple(words.split()))
        for i, (spk, lab, words) in enumerate(rows)))


# ---------------------------------------------------------------------------
# Tag sets
# ---------------------------------------------------------------------------

def test_tagset_basics():
    ts = TagSet(("S", "Q", "B"))
    assert len(ts) == 3
    assert "Q" in ts
    assert "X" not in ts
    assert ts.collapse("Q") == "Q"


def test_tagset_collapsed_classes():
    ts = TagSet(("S", "Other"), collapsed=(("Other", ("Oh", "Um")),))
    assert ts.collapse("Oh") == "Other"
    assert ts.collapse("Um") == "Other"
    assert ts.collapse("S") == "S"
    assert "Oh" in ts
    assert set(ts.expanded_labels()) == {"S", "Oh", "Um"}


def test_tagset_rejects_duplicates_and_whitespace():
    with pytest.raises(CorpusError):
        TagSet(("S", "S"))
    with pytest.raises(CorpusError):
        TagSet(("a label",))
    with pytest.raises(CorpusError):
        TagSet(())


def test_tagset_collapse_unknown_label():
    with pytest.raises(CorpusError):
        TagSet(("S",)).collapse("nope")


def test_default_tagset_has_42_labels():
    ts = default_tagset()
    assert len(ts) == 42
    assert "Statement" in ts.labels
    assert "Backchannel/Acknowledge" in ts.labels
    # single tokens: needed for whitespace-separated model files
    assert all(lab.split() == [lab] for lab in ts.labels)


def test_tagset_file_round_trip(tmp_path):
    ts = TagSet(("S", "Q", "B/ACK"))
    path = tmp_path / "tags.txt"
    save_tagset(ts, path)
    assert load_tagset(path).labels == ts.labels


# ---------------------------------------------------------------------------
# Conversations
# ---------------------------------------------------------------------------

def test_conversation_requires_contiguous_indices():
    with pytest.raises(CorpusError):
        Conversation("c", (Utterance(1, "A", "S", ("hi",)),))


def test_utterance_speaker_validated():
    with pytest.raises(CorpusError):
        Utterance(0, "C", "S", ("hi",))


def test_conversation_round_trip(tmp_path):
    convs = [mk_conv("c1", [("A", "S", "hello there"), ("B", None, ""),
                            ("A", "Q", "you ok")]),
             mk_conv("c2", [("B", "B", "uh-huh")])]
    path = tmp_path / "corpus.tsv"
    serialize_conversations(convs, path)
    back = parse_conversations(path, TagSet(("S", "Q", "B")))
    assert back == convs


def test_parse_conversations_rejects_unknown_label(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("c1\t0\tA\tNope\thi\n")
    with pytest.raises(CorpusError):
        parse_conversations(path, TagSet(("S",)))


def test_parse_conversations_rejects_interleaving(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("c1\t0\tA\tS\thi\nc2\t0\tB\tS\tyo\nc1\t1\tB\tS\tback\n")
    with pytest.raises(CorpusError):
        parse_conversations(path, TagSet(("S",)))


def test_parse_conversations_rejects_index_gap(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("c1\t0\tA\tS\thi\nc1\t2\tB\tS\tyo\n")
    with pytest.raises(CorpusError):
        parse_conversations(path, TagSet(("S",)))


def test_parse_conversations_skips_comments_and_blanks(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("# header\n\nc1\t0\tA\tS\thi\n")
    convs = parse_conversations(path, TagSet(("S",)))
    assert len(convs) == 1 and convs[0].utterances[0].words == ("hi",)


conv_rows = st.lists(
    st.tuples(st.sampled_from(["A", "B"]),
              st.sampled_from(["S", "Q", None]),
              st.lists(st.text(alphabet="abcxyz", min_size=1, max_size=4),
                       max_size=4).map(" ".join)),
    min_size=1, max_size=6)


@settings(max_examples=60, deadline=None)
@given(st.lists(conv_rows, min_size=1, max_size=4))
def test_conversation_round_trip_random(tmp_path_factory, rows_per_conv):
    convs = [mk_conv(f"c{i}", rows) for i, rows in enumerate(rows_per_conv)]
    path = tmp_path_factory.mktemp("rt") / "c.tsv"
    serialize_conversations(convs, path)
    assert parse_conversations(path, TagSet(("S", "Q"))) == convs


# ---------------------------------------------------------------------------
# N-best lists
# ---------------------------------------------------------------------------

def test_nbest_round_trip(tmp_path):
    table = {("c1", 0): NBestList((Hypothesis(("a", "b"), -1.5),
                                   Hypothesis(("a",), -2.25))),
             ("c1", 1): NBestList((Hypothesis((), 0.0),))}
    path = tmp_path / "n.tsv"
    serialize_nbest(table, path)
    assert parse_nbest(path) == table


def test_nbest_rank_gap_rejected(tmp_path):
    path = tmp_path / "n.tsv"
    path.write_text("c1\t0\t1\t-1.0\ta\nc1\t0\t3\t-2.0\tb\n")
    with pytest.raises(CorpusError):
        parse_nbest(path)


def test_nbest_truncation(tmp_path):
    table = {("c1", 0): NBestList(tuple(
        Hypothesis((f"w{r}",), -float(r)) for r in range(1, 6)))}
    path = tmp_path / "n.tsv"
    serialize_nbest(table, path)
    cut = parse_nbest(path, max_hyps=2)
    assert len(cut[("c1", 0)]) == 2
    assert cut[("c1", 0)].first.words == ("w1",)


def test_empty_nbest_rejected():
    with pytest.raises(CorpusError):
        NBestList(())


def test_attach_nbest_leaves_missing_utterances_alone():
    conv = mk_conv("c1", [("A", "S", "hi"), ("B", "S", "yo")])
    nb = {("c1", 0): NBestList((Hypothesis(("hi",), -1.0),))}
    out = attach_nbest([conv], nb)[0]
    assert out.utterances[0].nbest is not None
    assert out.utterances[1].nbest is None
    assert conv.utterances[0].nbest is None  # original untouched


# ---------------------------------------------------------------------------
# Prosodic features
# ---------------------------------------------------------------------------

def test_prosody_round_trip(tmp_path):
    schema = FeatureSchema(("f0", "gender"), ("continuous", "categorical"))
    table = {("c1", 0): FeatureVector({"f0": 1.5, "gender": "f"}),
             ("c1", 1): FeatureVector({"f0": None, "gender": "m"})}
    path = tmp_path / "p.tsv"
    serialize_prosody(schema, table, path)
    schema2, table2 = parse_prosody(path)
    assert schema2 == schema
    assert table2 == table


def test_prosody_kind_inference(tmp_path):
    path = tmp_path / "p.tsv"
    path.write_text("f0\tgender\nc1\t0\t1.5\tf\nc1\t1\tNA\tm\n")
    schema, table = parse_prosody(path)
    assert schema.kinds == ("continuous", "categorical")
    assert table[("c1", 1)].values["f0"] is None


def test_attach_prosody():
    conv = mk_conv("c1", [("A", "S", "hi")])
    out = attach_prosody([conv], {("c1", 0): FeatureVector({"f0": 2.0})})[0]
    assert out.utterances[0].prosody["f0"] == 2.0


# ---------------------------------------------------------------------------
# Sampling helpers
# ---------------------------------------------------------------------------

def test_symmetrize_speakers():
    conv = mk_conv("c1", [("A", "S", "hi"), ("B", "Q", "you")])
    out = symmetrize_speakers([conv])
    assert len(out) == 2
    assert out[0] == conv
    assert [u.speaker for u in out[1]] == ["B", "A"]
    assert [u.da_label for u in out[1]] == ["S", "Q"]
    assert out[1].conv_id == "c1"


def utts_with_labels(spec):
    return [Utterance(i, "A", lab, ("w",)) for i, lab in enumerate(spec)]


def test_downsample_uniform_balances_classes():
    utts = utts_with_labels(["S"] * 10 + ["Q"] * 3)
    # indices stay valid because downsampling returns existing objects
    sample = downsample_uniform(utts, ["S", "Q"], seed=1)
    counts = {lab: sum(u.da_label == lab for u in sample) for lab in ("S", "Q")}
    assert counts == {"S": 3, "Q": 3}


def test_downsample_uniform_deterministic_and_seed_sensitive():
    utts = utts_with_labels(["S"] * 20 + ["Q"] * 5)
    a = downsample_uniform(utts, ["S", "Q"], seed=7)
    b = downsample_uniform(utts, ["S", "Q"], seed=7)
    assert a == b
    seeds = {tuple(u.index for u in downsample_uniform(utts, ["S", "Q"], seed=s))
             for s in range(6)}
    assert len(seeds) > 1


def test_downsample_uniform_missing_class():
    with pytest.raises(CorpusError):
        downsample_uniform(utts_with_labels(["S"]), ["S", "Q"])


def test_jackknife_split_halves():
    items = list(range(11))
    first, second = jackknife_split(items, seed=3)
    assert len(first) == 5 and len(second) == 6
    assert sorted(first + second) == items
    assert first == sorted(first) and second == sorted(second)
    assert jackknife_split(items, seed=3) == (first, second)
