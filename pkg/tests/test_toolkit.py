import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from npmt.analysis import export_gates, extract_phrase_map, group_positions, sweep_windows
from npmt.bleu import bleu
from npmt.cli import main, read_config
from npmt.model import NPMT, ModelConfig
from npmt.toy import ToyTaskSpec
from npmt.train import TrainConfig

THANKS_TRACE = [
    ("danke", ["thank", "you"]),
    (",", [","]),
    ("aber", ["but"]),
    ("das", []),
    ("beste", ["the", "best", "thing"]),
    ("kommt", ["is", "still", "coming"]),
    ("noch", []),
    (".", ["."]),
]


class TestBleu:
    def test_hand_example(self):
        assert abs(bleu(["a b c d"], ["a b c d e"]) - 100 * math.exp(-0.25)) < 1e-9
        assert abs(bleu(["a b c d"], ["a b c d e"]) - 77.88) < 0.01

    def test_identity(self):
        lines = ["the cat sat on the mat", "a b c d e"]
        assert bleu(lines, lines) == 100.0

    def test_no_four_gram_match(self):
        assert bleu(["a b c d"], ["a b c e"]) == 0.0

    def test_smoothing(self):
        assert bleu(["a b c d"], ["a b c e"], smooth=True) > 0.0

    def test_errors(self):
        with pytest.raises(ValueError):
            bleu([], [])
        with pytest.raises(ValueError):
            bleu(["a"], ["a", "b"])

    @given(st.lists(st.lists(st.sampled_from("abcd"), min_size=4, max_size=7), min_size=1, max_size=4),
           st.lists(st.lists(st.sampled_from("abcd"), min_size=4, max_size=7), min_size=1, max_size=4))
    def test_hundred_iff_equal(self, cands, refs):
        refs = (refs * len(cands))[: len(cands)]
        score = bleu(cands, refs)
        assert 0.0 <= score <= 100.0 + 1e-9
        if cands == refs:
            assert abs(score - 100.0) < 1e-9
        else:
            assert score < 100.0 - 1e-9


class TestPhraseMap:
    def test_sleeping_words_join_next_group(self):
        table = extract_phrase_map([THANKS_TRACE])
        assert table.counts[(("das", "beste"), ("the", "best", "thing"))] == 1
        assert table.category(("das", "beste"), ("the", "best", "thing")) == "Many->Many"
        # trailing-free interior $ ("noch") attaches forward to "."
        assert table.counts[(("noch", "."), (".",))] == 1

    def test_no_grouping_when_all_emit(self):
        trace = [("gibt", ["there"]), ("es", ["'s", "a"])]
        table = extract_phrase_map([trace])
        assert set(table.buckets()["One->One"]) | set(table.buckets()["One->Many"]) == set(table.counts)

    def test_reported_shape(self):
        table = extract_phrase_map([[("gibt", []), ("es", ["there", "'s"])]])
        assert table.top("Many->Many") == [(("gibt", "es"), ("there", "'s"), 1)]

    def test_trailing_sleepers_attach_backward(self):
        groups = group_positions([["a"], [], ["b"], [], []])
        assert groups == [([0], ["a"]), ([1, 2, 3, 4], ["b"])]

    def test_all_empty_skipped(self):
        table = extract_phrase_map([[("x", []), ("y", [])], THANKS_TRACE])
        assert table.skipped == 1

    @given(st.lists(st.lists(st.sampled_from(["u", "v"]), max_size=3), min_size=1, max_size=8))
    def test_group_invariants(self, segs):
        groups = group_positions(segs)
        nonempty = [s for s in segs if s]
        if not nonempty:
            assert groups is None
            return
        assert len(groups) == len(nonempty)
        assert sum(len(pos) for pos, _ in groups) == len(segs)
        assert [p for pos, _ in groups for p in pos] == list(range(len(segs)))

    def test_bucket_totals_and_unk_view(self):
        traces = [[("UNK", ["a"]), ("x", ["b", "c"])], [("p", []), ("q", ["<unk>", "d"])], [("p", []), ("q", ["e", "f"])]]
        table = extract_phrase_map(traces)
        assert sum(sum(b.values()) for b in table.buckets().values()) == sum(table.counts.values())
        assert len(table.top("Many->Many")) == 2
        assert table.top("Many->Many", drop_unk=True) == [(("p", "q"), ("e", "f"), 1)]
        assert "Many->Many*\t1\tp q\te f" in table.to_tsv()


class TestGates:
    def model(self, window=3):
        cfg = ModelConfig(src_vocab=12, tgt_vocab=9, emb_dim=3, tgt_emb_dim=3, enc_hidden=4, dec_hidden=4, window=window)
        return NPMT.create(cfg, 0, np.float64)

    def test_zero_weights(self):
        m = self.model()
        m.params["reorder.w"].data[:] = 0.0
        gm = export_gates(m, [4, 5, 6, 7])
        assert np.all(gm.values == 0.5)

    @pytest.mark.parametrize("window, n", [(1, 1), (3, 5), (7, 4)])
    def test_dims(self, window, n):
        gm = export_gates(self.model(window), list(range(4, 4 + n)))
        assert gm.values.shape == (n, window)
        assert np.all((gm.values > 0) & (gm.values < 1))
        assert len(gm.to_tsv().splitlines()) == n + 1

    def test_no_reordering_layer(self):
        with pytest.raises(ValueError):
            export_gates(self.model(0), [4, 5])


class TestSweep:
    def test_identical_runs(self):
        task = ToyTaskSpec(kind="local-swap", n_train=40, n_dev=10, n_test=10)
        cfg = TrainConfig(epochs=1, batch_size=8, dropout=0.0, emb_dim=4, tgt_emb_dim=4, enc_hidden=6, dec_hidden=6)
        rows = sweep_windows(task, [1, 1], cfg, max_steps=2)
        assert rows[0] == rows[1]
        assert set(rows[0]) == {"window", "exact_match", "bleu"}

    def test_sizes_validated(self):
        with pytest.raises(ValueError):
            sweep_windows(ToyTaskSpec(), [2], TrainConfig())


class TestCli:
    def test_pipeline(self, tmp_path, capsys):
        toy = tmp_path / "toy"
        assert main(["gen-toy", "--kind", "phrase-copy", "--out", str(toy), "--n-train", "60", "--n-dev", "10",
                     "--n-test", "10"]) == 0
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("# tiny\nepochs=1\nemb_dim=4\ntgt_emb_dim=4\nenc_hidden=6\ndec_hidden=6\nwindow=3\n")
        run = tmp_path / "run"
        assert main(["train", "--src", str(toy / "train.src"), "--tgt", str(toy / "train.tgt"),
                     "--dev-src", str(toy / "dev.src"), "--dev-tgt", str(toy / "dev.tgt"),
                     "--config", str(cfg), "--out", str(run), "--seed", "1"]) == 0
        assert (run / "best.ckpt").exists() and (run / "vocab.src").exists()

        hyp, trace = tmp_path / "hyp.txt", tmp_path / "trace.tsv"
        main(["decode", "--ckpt", str(run / "best.ckpt"), "--input", str(toy / "test.src"), "--output", str(hyp),
              "--trace", str(trace)])
        assert len(hyp.read_text().splitlines()) == 10
        hyp2 = tmp_path / "hyp2.txt"
        main(["decode", "--ckpt", str(run / "best.ckpt"), "--input", str(toy / "test.src"), "--output", str(hyp2),
              "--trace", str(tmp_path / "trace2.tsv")])
        assert hyp.read_text() == hyp2.read_text()

        lm = tmp_path / "lm.arpa"
        main(["lm-train", "--corpus", str(toy / "train.tgt"), "--order", "3", "--out", str(lm)])
        main(["decode", "--ckpt", str(run / "best.ckpt"), "--input", str(toy / "test.src"), "--beam", "2",
              "--lm", str(lm), "--lambda1", "1.2", "--lambda2", "0.2", "--output", str(tmp_path / "beam.txt")])
        assert len((tmp_path / "beam.txt").read_text().splitlines()) == 10

        capsys.readouterr()
        main(["lm-score", "--lm", str(lm), "--input", str(toy / "test.tgt")])
        scores = capsys.readouterr().out.splitlines()
        assert len(scores) == 11 and scores[-1].startswith("total\t")

        main(["bleu", "--cand", str(toy / "test.tgt"), "--ref", str(toy / "test.tgt")])
        assert capsys.readouterr().out.strip() == "100.00"

        main(["analyze", "gates", "--ckpt", str(run / "best.ckpt"), "--sentence", "s1 s2 s3"])
        assert len(capsys.readouterr().out.splitlines()) == 4
        main(["analyze", "phrases", "--trace", str(trace), "--out", str(tmp_path / "phr.tsv")])
        assert (tmp_path / "phr.tsv").read_text().startswith("category\tcount\tsource\ttarget")

    def test_gen_toy_deterministic(self, tmp_path):
        for d in ("a", "b"):
            main(["gen-toy", "--kind", "local-swap", "--out", str(tmp_path / d), "--seed", "3", "--n-train", "30",
                  "--n-dev", "5", "--n-test", "5"])
        for name in ("train.src", "train.tgt", "test.seg", "phrase_table.tsv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_read_config(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("lr = 0.01  # faster\n\nepochs=3\n")
        assert read_config(p) == {"lr": "0.01", "epochs": "3"}
        p.write_text('{"lr": 0.01}')
        assert read_config(p) == {"lr": 0.01}
        p.write_text("nonsense\n")
        with pytest.raises(ValueError):
            read_config(p)
