"""Synthetic parallel data with planted phrase structure."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ParallelCorpus, build_vocab, encode_pairs


@dataclass(frozen=True)
class ToyTaskSpec:
    """Toy translation task.

    ``phrase-copy``: each source token maps to a fixed 1-3 token target
    phrase, concatenated in order.  ``local-swap``: in addition, tokens whose
    type is flagged as a trigger trade places with the token ``swap_window``
    positions to their right before mapping (scan left to right, no overlap);
    the source side keeps the original order.
    """

    kind: str = "phrase-copy"
    src_vocab: int = 20
    tgt_vocab: int = 40
    min_phrase: int = 1
    max_phrase: int = 3
    swap_window: int = 1
    trigger_rate: float = 0.5
    min_len: int = 3
    max_len: int = 8
    n_train: int = 5000
    n_dev: int = 500
    n_test: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("phrase-copy", "local-swap"):
            raise ValueError(f"unknown toy task kind {self.kind!r}")
        if not 1 <= self.min_phrase <= self.max_phrase:
            raise ValueError("phrase length range is empty")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ValueError("sentence length range is empty")


@dataclass
class ToyCorpus(ParallelCorpus):
    phrase_table: dict[str, list[str]] = field(default_factory=dict)
    triggers: frozenset = frozenset()
    text: dict[str, list[tuple[str, str]]] = field(default_factory=dict)
    planted: dict[str, list[list[int]]] = field(default_factory=dict)


def phrase_table(spec: ToyTaskSpec) -> tuple[dict[str, list[str]], frozenset]:
    rng = np.random.default_rng([spec.seed, 0])
    table = {}
    for i in range(spec.src_vocab):
        n = int(rng.integers(spec.min_phrase, spec.max_phrase + 1))
        table[f"s{i}"] = [f"t{int(v)}" for v in rng.integers(0, spec.tgt_vocab, size=n)]
    flags = rng.random(spec.src_vocab) < spec.trigger_rate
    triggers = frozenset(f"s{i}" for i in range(spec.src_vocab) if flags[i])
    return table, triggers


def apply_swaps(src: list[str], triggers, distance: int) -> list[str]:
    out = list(src)
    i = 0
    while i + distance < len(out):
        if out[i] in triggers:
            out[i], out[i + distance] = out[i + distance], out[i]
            i += distance + 1
        else:
            i += 1
    return out


def gen_toy(spec: ToyTaskSpec) -> ToyCorpus:
    table, triggers = phrase_table(spec)
    if spec.kind == "phrase-copy":
        triggers = frozenset()
    rng = np.random.default_rng([spec.seed, 1])
    sizes = {"train": spec.n_train, "dev": spec.n_dev, "test": spec.n_test}
    seen: set[tuple[str, ...]] = set()
    text, planted = {}, {}
    possible = sum(spec.src_vocab**n for n in range(spec.min_len, spec.max_len + 1))
    if possible < sum(sizes.values()):
        raise ValueError("not enough distinct sentences for the requested split sizes")
    for split, count in sizes.items():
        pairs, segs = [], []
        while len(pairs) < count:
            n = int(rng.integers(spec.min_len, spec.max_len + 1))
            src = [f"s{int(v)}" for v in rng.integers(0, spec.src_vocab, size=n)]
            key = tuple(src)
            if key in seen:
                continue
            seen.add(key)
            order = apply_swaps(src, triggers, spec.swap_window) if triggers else src
            tgt = [w for s in order for w in table[s]]
            pairs.append((" ".join(src), " ".join(tgt)))
            segs.append([len(table[s]) for s in order])
        text[split], planted[split] = pairs, segs
    src_vocab = build_vocab(s for s, _ in text["train"])
    tgt_vocab = build_vocab(t for _, t in text["train"])
    splits = {k: encode_pairs(v, src_vocab, tgt_vocab) for k, v in text.items()}
    return ToyCorpus(src_vocab, tgt_vocab, splits, table, triggers, text, planted)


def boundaries(lengths) -> set[int]:
    """Target offsets at which segments end (empty segments contribute nothing)."""
    out, j = set(), 0
    for n in lengths:
        if n:
            j += n
            out.add(j)
    return out


def boundary_f1(predicted: list[list[int]], planted: list[list[int]]) -> float:
    """Micro-averaged F1 of segment end positions."""
    tp = n_pred = n_gold = 0
    for p, g in zip(predicted, planted):
        bp, bg = boundaries(p), boundaries(g)
        tp += len(bp & bg)
        n_pred += len(bp)
        n_gold += len(bg)
    if tp == 0:
        return 0.0
    prec, rec = tp / n_pred, tp / n_gold
    return 2 * prec * rec / (prec + rec)
