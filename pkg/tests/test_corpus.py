import json

import pytest

from storyfill import corpus as corpus_mod
from storyfill.corpus import (
    CorpusError,
    Story,
    generate_synthetic_corpus,
    load_corpus,
    segment_stories,
    skip_segments,
    split_corpus,
)

JIM_ROW = (
    'story1,Hiking,"Jim went hiking alone at the state park.",'
    '"He got lost on a trail.","He slipped and fell.",'
    '"Jim broke his leg.","Jim was rescued."'
)


def test_load_rocstories_csv(tmp_path):
    path = tmp_path / "roc.csv"
    path.write_text(
        "storyid,storytitle,sentence1,sentence2,sentence3,sentence4,sentence5\n"
        + JIM_ROW + "\n",
        encoding="utf-8",
    )
    stories = load_corpus(path, "rocstories-csv")
    assert len(stories) == 1
    assert stories[0].id == "story1"
    assert len(stories[0].sentences) == 5
    assert stories[0].sentences[0] == "Jim went hiking alone at the state park."
    assert stories[0].sentences[-1] == "Jim was rescued."


def test_load_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("", encoding="utf-8")
    assert load_corpus(path, "rocstories-csv") == []


def test_load_wrong_arity(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text('s1,t,"a.","b.","c.","d."\n', encoding="utf-8")
    with pytest.raises(CorpusError, match=":1"):
        load_corpus(path, "rocstories-csv")


def test_load_empty_sentence_field(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text('s1,t,"a.","","c.","d.","e."\n', encoding="utf-8")
    with pytest.raises(CorpusError, match="empty sentence"):
        load_corpus(path, "rocstories-csv")


def test_plain_lines_round_trip(tmp_path, stories):
    path = tmp_path / "corpus.tsv"
    corpus_mod.save_plain_lines(stories, path)
    reloaded = load_corpus(path, "plain-lines")
    assert [s.sentences for s in reloaded] == [s.sentences for s in stories]
    assert [s.id for s in reloaded] == [str(i) for i in range(len(stories))]


def test_split_sizes_match_default_ratios():
    stories = [Story(id=str(i), sentences=("a.", "b.")) for i in range(100)]
    split = split_corpus(stories, (0.9, 0.05, 0.05), seed=3)
    assert (len(split.train), len(split.dev), len(split.test)) == (90, 5, 5)


def test_split_partition_properties(stories):
    split = split_corpus(stories, (0.7, 0.2, 0.1), seed=5)
    ids = [s.id for part in (split.train, split.dev, split.test) for s in part]
    assert sorted(ids) == sorted(s.id for s in stories)
    assert len(set(ids)) == len(ids)


def test_split_all_train(stories):
    split = split_corpus(stories, (1, 0, 0), seed=0)
    assert len(split.train) == len(stories)
    assert not split.dev and not split.test


def test_split_deterministic(stories):
    a = split_corpus(stories, (0.9, 0.05, 0.05), seed=42)
    b = split_corpus(stories, (0.9, 0.05, 0.05), seed=42)
    assert [s.id for s in a.train] == [s.id for s in b.train]
    assert [s.id for s in a.test] == [s.id for s in b.test]


def test_split_negative_ratio(stories):
    with pytest.raises(ValueError, match="negative"):
        split_corpus(stories, (1.2, -0.1, -0.1), seed=0)


def test_segment_count_five_sentence_story():
    story = Story(id="s", sentences=("a.", "b.", "c.", "d.", "e."))
    segments = segment_stories([story], 3, 5)
    # brute-force oracle: 3 windows of length 3, 2 of length 4, 1 of length 5
    assert len(segments) == 6
    by_len = sorted(len(seg.sentences) for seg in segments)
    assert by_len == [3, 3, 3, 4, 4, 5]


def test_segment_count_formula(stories):
    segments = segment_stories(stories, 2, 4)
    expected = 0
    for s in stories:
        L = len(s.sentences)
        for w in range(2, 5):
            expected += max(0, L - w + 1)
    assert len(segments) == expected


def test_segments_are_contiguous_slices(stories):
    lookup = {s.id: s for s in stories}
    for seg in segment_stories(stories, 3, 5):
        src = lookup[seg.source_id]
        assert src.sentences[seg.start : seg.start + len(seg.sentences)] == seg.sentences


def test_short_story_yields_nothing():
    story = Story(id="s", sentences=("a.", "b."))
    assert segment_stories([story], 3, 5) == []


def test_skip_segments_five_sentence_story():
    story = Story(id="s", sentences=("a.", "b.", "c.", "d.", "e."))
    segments = skip_segments([story])
    # three drop-one-interior subsequences plus the endpoints-and-middle triple
    assert [seg.sentences for seg in segments] == [
        ("a.", "c.", "d.", "e."),
        ("a.", "b.", "d.", "e."),
        ("a.", "b.", "c.", "e."),
        ("a.", "c.", "e."),
    ]


def test_skip_segments_preserve_endpoints_and_order(stories):
    lookup = {s.id: s for s in stories}
    for seg in skip_segments(stories):
        src = lookup[seg.source_id]
        assert seg.sentences[0] == src.sentences[0]
        assert seg.sentences[-1] == src.sentences[-1]
        positions = [src.sentences.index(x) for x in seg.sentences]
        assert positions == sorted(positions)


def test_skip_segments_short_stories_skipped():
    story = Story(id="s", sentences=("a.", "b.", "c."))
    assert skip_segments([story]) == []


def test_synthetic_corpus_shape(grammar):
    stories = generate_synthetic_corpus(grammar, 25, seed=1)
    assert len(stories) == 25
    for s in stories:
        assert len(s.sentences) == 5
        assert all(sent.strip() for sent in s.sentences)


def test_synthetic_corpus_deterministic(grammar):
    a = generate_synthetic_corpus(grammar, 40, seed=9)
    b = generate_synthetic_corpus(grammar, 40, seed=9)
    assert [s.sentences for s in a] == [s.sentences for s in b]


def test_synthetic_corpus_empty(grammar):
    assert generate_synthetic_corpus(grammar, 0, seed=0) == []


def test_synthetic_ending_tracks_complication(grammar):
    """With full coupling the ending is always drawn from the pool belonging
    to the story's complication sentence."""
    coupled = dict(grammar, coupling=1.0)
    ending_pools = {c["event"]: set(c["endings"]) for c in grammar["complications"]}
    for story in generate_synthetic_corpus(coupled, 100, seed=2):
        event = story.sentences[2].split(" ", 1)[1].rstrip(".")
        ending = story.sentences[4].split(" ", 1)[1].rstrip(".")
        assert ending in ending_pools[event]


def test_malformed_grammar(tmp_path):
    path = tmp_path / "g.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(CorpusError, match="invalid grammar"):
        corpus_mod.load_grammar(path)
    path.write_text(json.dumps({"protagonists": ["A"]}), encoding="utf-8")
    with pytest.raises(CorpusError, match="missing"):
        corpus_mod.load_grammar(path)


def test_story_invariants():
    with pytest.raises(CorpusError):
        Story(id="x", sentences=("only one.",))
    with pytest.raises(CorpusError):
        Story(id="x", sentences=("a.", "  "))
