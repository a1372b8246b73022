"""Command-line entry points."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import export_gates, extract_phrase_map, sweep_windows
from .bleu import bleu
from .data import build_vocab, encode_pairs, read_lines, read_parallel, write_parallel
from .decode import BeamScorer, beam_decode, greedy_decode_batch, read_trace, trace_lines
from .lm import lm_logprob, read_arpa, train_ngram, write_arpa
from .model import NPMT
from .toy import ToyTaskSpec, gen_toy
from .train import TrainConfig, load_checkpoint, train_loop

log = logging.getLogger("npmt")


def read_config(path) -> dict:
    """``key=value`` lines (``#`` comments allowed) or a JSON object."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        return json.loads(text)
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_train(a) -> int:
    opts = read_config(a.config) if a.config else {}
    if a.seed is not None:
        opts["seed"] = a.seed
    cfg = TrainConfig.from_dict(opts)
    train_text = read_parallel(a.src, a.tgt)
    dev_text = read_parallel(a.dev_src, a.dev_tgt)
    src_vocab = build_vocab(s for s, _ in train_text)
    tgt_vocab = build_vocab(t for _, t in train_text)
    train = encode_pairs(train_text, src_vocab, tgt_vocab)
    dev = encode_pairs(dev_text, src_vocab, tgt_vocab)
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    model = NPMT.create(cfg.model_config(len(src_vocab), len(tgt_vocab)), cfg.seed, dtype)
    out = Path(a.out)
    res = train_loop(model, train, dev, cfg, out, src_vocab, tgt_vocab, max_steps=a.max_steps)
    src_vocab.save(out / "vocab.src")
    tgt_vocab.save(out / "vocab.tgt")
    log.info("best dev nll %.4f at %s", res.best_dev_nll, res.best_path)
    return 0


def cmd_decode(a) -> int:
    ck = load_checkpoint(a.ckpt)
    if ck.src_vocab is None or ck.tgt_vocab is None:
        raise SystemExit(f"{a.ckpt} carries no vocabularies")
    model, sv, tv = ck.model, ck.src_vocab, ck.tgt_vocab
    lm_score = None
    if a.lm:
        lm = read_arpa(a.lm)

        def lm_score(tokens, final):
            return lm_logprob(lm, [tv.word(i) for i in tokens], eos=final)

    scorer = BeamScorer(a.lambda1, a.lambda2, lm_score)
    lines = read_lines(a.input)
    hyps, traces = [], []
    for line in lines:
        words = line.split()
        if not words:
            hyps.append("")
            traces.append([])
            continue
        x = model.encode([sv.encode(words)]).data
        if a.beam > 1 or a.lambda1 or a.lambda2:
            out = beam_decode(x, a.beam, scorer, model.swan_cfg, model.decoder, merge=not a.no_merge)
        else:
            out = greedy_decode_batch(x, [len(words)], model.decoder, model.swan_cfg)[0]
        hyps.append(tv.decode(out.tokens))
        traces.append(trace_lines(words, out, tv.word))
    _write(a.output, "".join(h + "\n" for h in hyps))
    if a.trace:
        Path(a.trace).write_text("".join("\n".join(t) + "\n\n" for t in traces if t), encoding="utf-8")
    return 0


def cmd_lm_train(a) -> int:
    corpus = [line.split() for line in read_lines(a.corpus)]
    write_arpa(train_ngram(corpus, a.order, a.discount), a.out)
    return 0


def cmd_lm_score(a) -> int:
    lm = read_arpa(a.lm)
    total = 0.0
    rows = []
    for line in read_lines(a.input):
        lp = lm_logprob(lm, line.split())
        total += lp
        rows.append(f"{lp:.6f}\n")
    rows.append(f"total\t{total:.6f}\n")
    _write(a.output, "".join(rows))
    return 0


def _toy_spec(a) -> ToyTaskSpec:
    kw = {k: getattr(a, k) for k in ("n_train", "n_dev", "n_test", "swap_window") if getattr(a, k) is not None}
    return ToyTaskSpec(kind=a.kind, seed=a.seed, **kw)


def cmd_gen_toy(a) -> int:
    corpus = gen_toy(_toy_spec(a))
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, pairs in corpus.text.items():
        write_parallel(out / split, pairs)
        segs = corpus.planted[split]
        (out / f"{split}.seg").write_text("".join(" ".join(map(str, s)) + "\n" for s in segs), encoding="utf-8")
    rows = [f"{s}\t{' '.join(t)}\t{int(s in corpus.triggers)}\n" for s, t in corpus.phrase_table.items()]
    (out / "phrase_table.tsv").write_text("source\ttarget\ttrigger\n" + "".join(rows), encoding="utf-8")
    return 0


def cmd_analyze(a) -> int:
    if a.what == "phrases":
        traces = [[(src, seg) for _, src, seg in sent] for sent in read_trace(a.trace)]
        table = extract_phrase_map(traces)
        if table.skipped:
            log.warning("skipped %d sentences with no emitted words", table.skipped)
        _write(a.out, table.to_tsv(a.top))
    else:
        ck = load_checkpoint(a.ckpt)
        words = a.sentence.split()
        gm = export_gates(ck.model, ck.src_vocab.encode(words), words, ck.tgt_vocab.word)
        _write(a.out, gm.to_tsv())
    return 0


def cmd_sweep(a) -> int:
    sizes = [int(s) for s in a.sizes.split(",")]
    opts = read_config(a.config) if a.config else {"lr": 0.003, "dropout": 0.0}
    opts.setdefault("epochs", a.epochs)
    opts["seed"] = a.seed
    rows = sweep_windows(_toy_spec(a), sizes, TrainConfig.from_dict(opts), max_steps=a.max_steps)
    text = "window\texact_match\tbleu\n" + "".join(
        f"{r['window']}\t{r['exact_match']:.4f}\t{r['bleu']:.2f}\n" for r in rows
    )
    _write(a.out, text)
    return 0


def cmd_bleu(a) -> int:
    score = bleu(read_lines(a.cand), read_lines(a.ref), a.max_n, a.smooth)
    print(f"{score:.2f}")
    return 0


def _toy_args(p: argparse.ArgumentParser, kind_default: str | None) -> None:
    p.add_argument("--kind", choices=("phrase-copy", "local-swap"), default=kind_default, required=kind_default is None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-dev", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--swap-window", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="npmt", description="Phrase-based neural translation toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    for flag in ("--src", "--tgt", "--dev-src", "--dev-tgt", "--out"):
        p.add_argument(flag, required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("decode", help="translate a file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--lm")
    p.add_argument("--lambda1", type=float, default=0.0)
    p.add_argument("--lambda2", type=float, default=0.0)
    p.add_argument("--no-merge", action="store_true")
    p.add_argument("--trace")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("lm-train", help="estimate an n-gram LM and write ARPA")
    p.add_argument("--corpus", required=True)
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--discount", type=float, default=0.75)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_lm_train)

    p = sub.add_parser("lm-score", help="natural-log LM score per line")
    p.add_argument("--lm", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.set_defaults(fn=cmd_lm_score)

    p = sub.add_parser("gen-toy", help="write a synthetic parallel corpus")
    _toy_args(p, None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_toy)

    p = sub.add_parser("analyze", help="phrase mappings or reordering gates")
    asub = p.add_subparsers(dest="what", required=True)
    q = asub.add_parser("phrases")
    q.add_argument("--trace", required=True)
    q.add_argument("--out")
    q.add_argument("--top", type=int, default=10)
    q.set_defaults(fn=cmd_analyze)
    q = asub.add_parser("gates")
    q.add_argument("--ckpt", required=True)
    q.add_argument("--sentence", required=True)
    q.add_argument("--out")
    q.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("sweep-windows", help="train one toy model per reordering window size")
    _toy_args(p, "local-swap")
    p.add_argument("--sizes", default="1,3,5,7")
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--config")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("bleu", help="corpus BLEU of a candidate file")
    p.add_argument("--cand", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--max-n", type=int, default=4)
    p.add_argument("--smooth", action="store_true")
    p.set_defaults(fn=cmd_bleu)
    return ap


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return a.fn(a)


if __name__ == "__main__":
    sys.exit(main())
