import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npmt.lm import (
    BOS,
    EOS,
    LN10,
    UNK,
    ArpaModel,
    ArpaParseError,
    lm_logprob,
    read_arpa,
    train_ngram,
    write_arpa,
)

CORPUS = [
    "the cat sat on the mat".split(),
    "the dog sat on the log".split(),
    "a cat saw the dog".split(),
    "the mat was red".split(),
]


def vocab_of(model):
    return model.predicted_vocab()


def context_sum(model, ctx):
    return math.fsum(10 ** model.score10(ctx, w) for w in vocab_of(model))


def contexts(model):
    for n in range(1, model.order):
        for g in model.ngrams[n - 1]:
            if g[-1] != EOS:
                yield g


class TestTraining:
    def test_single_word_unigrams(self):
        m = train_ngram([["a", "a", "a"]], order=1)
        assert set(vocab_of(m)) == {"a", EOS, UNK}
        assert abs(math.fsum(10 ** m.ngrams[0][(w,)][0] for w in vocab_of(m)) - 1.0) < 1e-9

    def test_unigram_hand_counts(self):
        # <s> a b a a c </s>: counts a=3, b=c=</s>=1, total 6, 4 types.
        # gamma = 0.75 * 4 / 6 = 0.5 spread over 5 predicted types.
        m = train_ngram(["a b a a c".split()], order=1)
        expect = {"a": 2.25 / 6 + 0.1, "b": 0.25 / 6 + 0.1, "c": 0.25 / 6 + 0.1, EOS: 0.25 / 6 + 0.1, UNK: 0.1}
        for w, p in expect.items():
            assert abs(10 ** m.ngrams[0][(w,)][0] - p) < 1e-12

    def test_two_sentence_normalization(self):
        m = train_ngram([["x", "y"], ["y", "x", "x"]], order=3)
        for ctx in [()] + list(contexts(m)):
            assert abs(context_sum(m, ctx) - 1.0) < 1e-9, ctx

    @pytest.mark.parametrize("order", [1, 2, 3, 4])
    def test_every_context_normalized(self, order):
        m = train_ngram(CORPUS, order=order)
        for ctx in [()] + list(contexts(m)):
            assert abs(context_sum(m, ctx) - 1.0) < 1e-7

    def test_structure(self):
        m = train_ngram(CORPUS, order=4)
        for n in range(2, 5):
            for g in m.ngrams[n - 1]:
                assert g[:-1] in m.ngrams[n - 2]
        assert all(bow is None for _, bow in m.ngrams[3].values())
        assert all(lp <= 0 for table in m.ngrams for lp, _ in table.values())
        assert (UNK,) in m.ngrams[0]

    @pytest.mark.parametrize("kw", [{"order": 0}, {"order": 5}, {"discount": 0.0}, {"discount": 1.0}])
    def test_bad_arguments(self, kw):
        with pytest.raises(ValueError):
            train_ngram(CORPUS, **kw)

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            train_ngram([])


class TestScoring:
    def backoff_model(self):
        return ArpaModel(
            2,
            [
                {(BOS,): (-99.0, -0.2), ("a",): (-1.0, -0.3), ("b",): (-0.7, -0.1), (EOS,): (-0.5, None), (UNK,): (-2.0, None)},
                {(BOS, "a"): (-0.4, None), ("a", EOS): (-0.6, None)},
            ],
        )

    def test_direct_hit(self):
        m = self.backoff_model()
        assert m.score10([BOS], "a") == -0.4

    def test_backoff(self):
        m = self.backoff_model()
        assert abs(m.score10(["a"], "b") - -1.0) < 1e-15

    def test_sentence_natural_log(self):
        m = self.backoff_model()
        assert abs(lm_logprob(m, ["a"]) - (-0.4 - 0.6) * LN10) < 1e-12

    def test_empty_sentence(self):
        m = self.backoff_model()
        assert abs(lm_logprob(m, []) - (-0.2 - 0.5) * LN10) < 1e-12

    def test_oov_maps_to_unk(self):
        m = self.backoff_model()
        assert m.score10(["a"], "zzz") == m.score10(["a"], UNK)

    @given(st.lists(st.sampled_from("the cat sat on mat dog log a saw was red zebra".split()), max_size=8),
           st.sampled_from("the cat sat on mat dog zebra".split()))
    @settings(max_examples=100, deadline=None)
    def test_prefix_monotone(self, prefix, word):
        m = train_ngram(CORPUS, order=3)
        assert lm_logprob(m, prefix + [word], eos=False) <= lm_logprob(m, prefix, eos=False)


class TestArpa:
    def test_round_trip(self, tmp_path):
        m = train_ngram(CORPUS, order=4)
        write_arpa(m, tmp_path / "a.arpa")
        m2 = read_arpa(tmp_path / "a.arpa")
        write_arpa(m2, tmp_path / "b.arpa")
        assert (tmp_path / "a.arpa").read_text() == (tmp_path / "b.arpa").read_text()
        m3 = read_arpa(tmp_path / "b.arpa")
        rng = np.random.default_rng(0)
        words = sorted({w for s in CORPUS for w in s}) + ["oov"]
        for _ in range(100):
            sent = [words[i] for i in rng.integers(0, len(words), size=rng.integers(0, 9))]
            assert lm_logprob(m2, sent) == lm_logprob(m3, sent)
            assert abs(lm_logprob(m2, sent) - lm_logprob(m, sent)) < 1e-5

    def test_minimal(self, tmp_path):
        p = tmp_path / "m.arpa"
        p.write_text("\\data\\\nngram 1=1\n\n\\1-grams:\n-0.5\tx\n\n\\end\\\n")
        m = read_arpa(p)
        assert m.order == 1 and m.ngrams[0] == {("x",): (-0.5, None)}

    def test_space_separated(self, tmp_path):
        p = tmp_path / "m.arpa"
        p.write_text("\\data\\\nngram 1=2\nngram 2=1\n\n\\1-grams:\n-0.5 x -0.1\n-0.3 y\n\n\\2-grams:\n-0.2 x y\n\n\\end\\\n")
        m = read_arpa(p)
        assert m.ngrams[1] == {("x", "y"): (-0.2, None)}
        assert m.ngrams[0][("x",)] == (-0.5, -0.1)

    @pytest.mark.parametrize(
        "text, lineno",
        [
            ("\\data\\\nngram 1=2\n\n\\1-grams:\n-0.5\tx\n\n\\end\\\n", 7),
            ("\\data\\\nngram 1=1\n\n\\1-grams:\n-0.5\tx\n", 5),
            ("\\data\\\nngram 1=1\n\n\\2-grams:\n-0.5\tx y\n\\end\\\n", 4),
            ("\\data\\\nngram 1=1\n\n\\1-grams:\nbogus\tx\n\\end\\\n", 5),
            ("\\data\\\nngram one\n", 2),
        ],
    )
    def test_parse_errors(self, tmp_path, text, lineno):
        p = tmp_path / "bad.arpa"
        p.write_text(text)
        with pytest.raises(ArpaParseError) as err:
            read_arpa(p)
        assert err.value.lineno == lineno
        assert f"line {lineno}" in str(err.value)
