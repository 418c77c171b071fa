import pytest

from storyfill import _purebpe
from storyfill.corpus import Story
from storyfill.tokenizer import (
    KERNEL_IMPLEMENTATION,
    SPECIAL_NAMES,
    SPECIAL_STRINGS,
    Vocab,
    train_tokenizer,
)


def test_size_cap_and_specials(stories):
    vocab = train_tokenizer(stories, 512)
    assert len(vocab) <= 512
    for name in SPECIAL_NAMES:
        assert vocab.tokens[vocab.specials[name]] == SPECIAL_STRINGS[name]
    # specials occupy the front of the id space and are distinct
    assert sorted(vocab.specials.values()) == list(range(len(SPECIAL_NAMES)))


def test_round_trip_every_training_sentence(stories, vocab):
    for story in stories:
        for sentence in story.sentences:
            assert vocab.decode(vocab.encode(sentence)) == sentence


def test_encode_empty(vocab):
    assert vocab.encode("") == []


def test_unknown_character_rejected(vocab):
    with pytest.raises(ValueError, match="not in vocabulary"):
        vocab.encode("éclair")


def test_target_too_small(stories):
    with pytest.raises(ValueError, match="too small"):
        train_tokenizer(stories, 10)


def test_training_deterministic(stories):
    a = train_tokenizer(stories, 300)
    b = train_tokenizer(stories, 300)
    assert a.tokens == b.tokens
    assert a.merges == b.merges


def test_merges_reduce_sequence_length(stories, vocab):
    sentence = stories[0].sentences[0]
    assert len(vocab.encode(sentence)) < len(sentence.replace(" ", "")) + sentence.count(" ")


def test_save_load_round_trip(tmp_path, vocab):
    path = tmp_path / "vocab.json"
    vocab.save(path)
    reloaded = Vocab.load(path)
    assert reloaded.tokens == vocab.tokens
    assert reloaded.merges == vocab.merges
    assert reloaded.specials == vocab.specials
    reloaded.save(tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_kernel_matches_pure_python():
    seqs = [[1, 2, 2, 3], [2, 2, 2], [5]]
    freqs = [3, 2, 7]
    pure = _purebpe.count_pairs(seqs, freqs)
    # (2,2) appears once in the first seq (freq 3) and twice in the second (freq 2)
    assert pure == {(1, 2): 3, (2, 2): 7, (2, 3): 3}
    assert _purebpe.apply_merge([2, 2, 2, 2, 1], 2, 2, 9) == [9, 9, 1]
    if KERNEL_IMPLEMENTATION == "cython":
        from storyfill import _fastbpe

        assert _fastbpe.count_pairs(seqs, freqs) == pure
        assert _fastbpe.apply_merge([2, 2, 2, 2, 1], 2, 2, 9) == [9, 9, 1]


def test_story_fixture_vocab_deterministic_given_order():
    stories = [Story(id="a", sentences=("the cat sat.", "the cat ran.")),
               Story(id="b", sentences=("a dog sat.", "a dog ran."))]
    v1 = train_tokenizer(stories, 60)
    v2 = train_tokenizer(stories, 60)
    assert v1.tokens == v2.tokens
    for s in stories:
        for sent in s.sentences:
            assert v1.decode(v1.encode(sent)) == sent
