"""Post-hoc analysis: phrase mappings, reordering gates, window-size sweeps."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .bleu import bleu
from .decode import greedy_decode
from .layers import encode_batch
from .model import NPMT
from .toy import ToyTaskSpec, gen_toy
from .train import TrainConfig, train_loop

log = logging.getLogger(__name__)

CATEGORIES = ("One->One", "One->Many", "Many->One", "Many->Many")
UNK_FORMS = frozenset({"UNK", "<unk>"})


@dataclass
class PhraseMapTable:
    counts: Counter = field(default_factory=Counter)
    skipped: int = 0

    @staticmethod
    def category(src: tuple[str, ...], tgt: tuple[str, ...]) -> str:
        return f"{'One' if len(src) == 1 else 'Many'}->{'One' if len(tgt) == 1 else 'Many'}"

    def buckets(self) -> dict[str, Counter]:
        out = {c: Counter() for c in CATEGORIES}
        for (src, tgt), n in self.counts.items():
            out[self.category(src, tgt)][(src, tgt)] += n
        return out

    def top(self, category: str, k: int = 10, drop_unk: bool = False) -> list[tuple[tuple, tuple, int]]:
        rows = [
            (src, tgt, n)
            for (src, tgt), n in self.buckets()[category].items()
            if not (drop_unk and (UNK_FORMS & set(src) or UNK_FORMS & set(tgt)))
        ]
        rows.sort(key=lambda r: (-r[2], r[0], r[1]))
        return rows[:k]

    def to_tsv(self, k: int = 10) -> str:
        lines = ["category\tcount\tsource\ttarget"]
        for cat in CATEGORIES:
            for src, tgt, n in self.top(cat, k):
                lines.append(f"{cat}\t{n}\t{' '.join(src)}\t{' '.join(tgt)}")
        for src, tgt, n in self.top("Many->Many", k, drop_unk=True):
            lines.append(f"Many->Many*\t{n}\t{' '.join(src)}\t{' '.join(tgt)}")
        return "\n".join(lines) + "\n"


def group_positions(segments: Sequence[Sequence[str]]) -> list[tuple[list[int], list[str]]] | None:
    """Attach every position that emits only ``$`` to the next position that
    emits words; trailing ones join the last group.  ``None`` if nothing was emitted.
    """
    groups: list[tuple[list[int], list[str]]] = []
    pending: list[int] = []
    for t, seg in enumerate(segments):
        pending.append(t)
        if seg:
            groups.append((pending, list(seg)))
            pending = []
    if not groups:
        return None
    if pending:
        groups[-1][0].extend(pending)
    return groups


def extract_phrase_map(traces: Iterable[Sequence[tuple[str, Sequence[str]]]]) -> PhraseMapTable:
    """Count (source group, emitted segment) pairs over decoded traces.

    Each trace is a list of ``(source word, emitted words)`` per position.
    """
    table = PhraseMapTable()
    for trace in traces:
        words = [w for w, _ in trace]
        groups = group_positions([seg for _, seg in trace])
        if groups is None:
            table.skipped += 1
            continue
        for pos, seg in groups:
            table.counts[(tuple(words[i] for i in pos), tuple(seg))] += 1
    return table


@dataclass
class GateMatrix:
    values: np.ndarray  # (T', 2tau+1)
    sources: list[str]
    labels: list[str]

    def to_tsv(self) -> str:
        tau = (self.values.shape[1] - 1) // 2
        head = ["pos", "source", "segment"] + [f"g{i - tau:+d}" for i in range(self.values.shape[1])]
        lines = ["\t".join(head)]
        for t, row in enumerate(self.values):
            cells = [str(t + 1), self.sources[t], self.labels[t]] + [f"{v:.6f}" for v in row]
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"


def export_gates(model: NPMT, tokens: Sequence[int], src_words=None, tgt_word=str) -> GateMatrix:
    """Reordering gate values per source position, labelled with the greedy segment there."""
    if model.encoder.reordering is None:
        raise ValueError("model has no reordering layer")
    x, gates = encode_batch(np.asarray([tokens]), model.encoder, return_gates=True)
    out = greedy_decode(x.data[0], model.decoder, model.swan_cfg)
    labels = [" ".join(tgt_word(v) for v in seg) if seg else "$" for seg in out.segments]
    src_words = list(src_words) if src_words is not None else [str(t) for t in tokens]
    return GateMatrix(np.asarray(gates.data[0], dtype=np.float64), src_words, labels)


def decode_pairs(model: NPMT, pairs, batch_size: int = 64):
    from .decode import greedy_decode_batch

    outs = []
    for k in range(0, len(pairs), batch_size):
        src = [s for s, _ in pairs[k : k + batch_size]]
        outs += greedy_decode_batch(model.encode(src).data, [len(s) for s in src], model.decoder, model.swan_cfg)
    return outs


def sweep_windows(
    task: ToyTaskSpec, sizes: Sequence[int], cfg: TrainConfig, split: str = "dev", max_steps: int | None = None
) -> list[dict]:
    """Train one model per window size on the same seeded data; report exact match and BLEU."""
    for s in sizes:
        if s < 1 or s % 2 == 0:
            raise ValueError(f"window sizes must be odd and >= 1, got {s}")
    corpus = gen_toy(task)
    train, evalset = corpus.pairs("train"), corpus.pairs(split)
    rows = []
    for size in sizes:
        run_cfg = replace(cfg, window=size)
        dtype = np.float32 if run_cfg.dtype == "float32" else np.float64
        model = NPMT.create(run_cfg.model_config(len(corpus.src_vocab), len(corpus.tgt_vocab)), run_cfg.seed, dtype)
        train_loop(model, train, corpus.pairs("dev"), run_cfg, max_steps=max_steps)
        outs = decode_pairs(model, evalset)
        hyp = [o.tokens for o in outs]
        ref = [list(t) for _, t in evalset]
        em = float(np.mean([h == r for h, r in zip(hyp, ref)]))
        score = bleu([[str(v) for v in h] for h in hyp], [[str(v) for v in r] for r in ref])
        rows.append({"window": size, "exact_match": em, "bleu": score})
        log.info("window %d: exact_match=%.3f bleu=%.2f", size, em, score)
    return rows
