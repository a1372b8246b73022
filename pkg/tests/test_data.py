import logging

import pytest
from hypothesis import given
from hypothesis import strategies as st

from npmt.data import (
    RESERVED,
    UNK,
    Vocab,
    build_vocab,
    encode_pairs,
    make_batches,
    padding_count,
    read_parallel,
    write_parallel,
)


class TestVocab:
    def test_frequency_order(self):
        v = build_vocab(["a b a"])
        assert len(v) == len(RESERVED) + 2
        assert v.id("a") < v.id("b")

    def test_min_count(self):
        v = build_vocab(["a b a"], min_count=2)
        assert "a" in v and "b" not in v

    def test_unknown(self):
        assert build_vocab(["a b a"]).encode("c") == [UNK]

    def test_ties_lexicographic(self):
        v = build_vocab(["z y x"])
        assert [v.word(i) for i in range(4, 7)] == ["x", "y", "z"]

    def test_max_size(self):
        v = build_vocab(["a a a b b c"], max_size=2)
        assert "c" not in v and "b" in v

    def test_reserved_never_produced(self):
        v = build_vocab(["$ <pad> a"])
        assert v.encode("$ <pad> a")[:2] == [UNK, UNK]

    def test_save_load(self, tmp_path):
        v = build_vocab(["the cat the dog"])
        v.save(tmp_path / "v.txt")
        lines = (tmp_path / "v.txt").read_text().split("\n")
        assert lines[0] == "the"
        assert Vocab.load(tmp_path / "v.txt").tokens == v.tokens

    @given(st.lists(st.sampled_from("a b c d e f".split()), min_size=1, max_size=12))
    def test_round_trip_with_unk(self, words):
        v = build_vocab(["a b c"])
        back = v.decode(v.encode(" ".join(words))).split()
        assert back == [w if w in "abc" else "<unk>" for w in words]


class TestBatches:
    pairs = [([1, 2], [1]), ([1], [1]), ([1, 2, 3], [1])]

    def test_sizes(self):
        sizes = sorted(len(b) for b in make_batches(self.pairs, 2))
        assert sizes == [1, 2]

    def test_equal_length_no_padding(self):
        pairs = [([1, 2, 3], [1])] * 7
        assert all(padding_count(b, pairs) == 0 for b in make_batches(pairs, 3))

    def test_bucketing_limits_padding(self):
        pairs = [([1] * n, [1]) for n in (1, 5, 1, 5, 1, 5)]
        assert all(padding_count(b, pairs) == 0 for b in make_batches(pairs, 3))

    def test_seeded_order(self):
        pairs = [([1] * (i % 5 + 1), [1]) for i in range(40)]
        assert make_batches(pairs, 4, seed=3) == make_batches(pairs, 4, seed=3)
        assert make_batches(pairs, 4, seed=3) != make_batches(pairs, 4, seed=4)

    def test_drop_long_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            batches = make_batches(self.pairs, 5, max_len=2)
        assert sorted(i for b in batches for i in b) == [0, 1]
        assert "dropped 1 pairs" in caplog.text

    def test_bad_size(self):
        with pytest.raises(ValueError):
            make_batches(self.pairs, 0)


class TestCorpusFiles:
    def test_write_read(self, tmp_path):
        pairs = [("a b", "x"), ("c", "y z")]
        write_parallel(tmp_path / "train", pairs)
        assert read_parallel(tmp_path / "train.src", tmp_path / "train.tgt") == pairs

    def test_mismatch(self, tmp_path):
        (tmp_path / "a.src").write_text("a\nb\n")
        (tmp_path / "a.tgt").write_text("x\n")
        with pytest.raises(ValueError):
            read_parallel(tmp_path / "a.src", tmp_path / "a.tgt")

    def test_empty_sides_filtered(self):
        v = build_vocab(["a b"])
        assert encode_pairs([("a", ""), ("", "b"), ("a", "b")], v, v) == [([4], [5])]
