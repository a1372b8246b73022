"""Vocabularies, parallel corpora and length-bucketed batches."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK, EOS_SEG, BOS_SEG = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "$", "<bos>")


@dataclass
class Vocab:
    """Token <-> id map; ids 0-3 are reserved for pad, unk, ``$`` and segment start."""

    tokens: list[str] = field(default_factory=lambda: list(RESERVED))

    def __post_init__(self):
        if tuple(self.tokens[: len(RESERVED)]) != RESERVED:
            self.tokens = list(RESERVED) + [t for t in self.tokens if t not in RESERVED]
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, tok: str) -> bool:
        return tok in self.index

    def id(self, tok: str) -> int:
        return self.index.get(tok, UNK) if tok not in RESERVED else UNK

    def encode(self, line: str | Sequence[str]) -> list[int]:
        words = line.split() if isinstance(line, str) else line
        return [self.id(w) for w in words]

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.tokens[i] for i in ids)

    def word(self, i: int) -> str:
        return self.tokens[i]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens[len(RESERVED) :]), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        words = Path(path).read_text(encoding="utf-8").split("\n")
        return cls(list(RESERVED) + [w for w in words if w])


def build_vocab(lines: Iterable[str], max_size: int | None = None, min_count: int = 1) -> Vocab:
    """Keep the most frequent tokens (ties in lexicographic order)."""
    counts = Counter(w for line in lines for w in line.split())
    for r in RESERVED:
        counts.pop(r, None)
    ranked = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    if max_size is not None:
        ranked = ranked[:max_size]
    return Vocab(list(RESERVED) + ranked)


@dataclass
class ParallelCorpus:
    """Aligned id sequences per split (``train``, ``dev``, ``test``)."""

    src_vocab: Vocab
    tgt_vocab: Vocab
    splits: dict[str, list[tuple[list[int], list[int]]]] = field(default_factory=dict)

    def pairs(self, split: str) -> list[tuple[list[int], list[int]]]:
        return self.splits.get(split, [])


def read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def read_parallel(src_path, tgt_path) -> list[tuple[str, str]]:
    src, tgt = read_lines(src_path), read_lines(tgt_path)
    if len(src) != len(tgt):
        raise ValueError(f"{src_path} has {len(src)} lines but {tgt_path} has {len(tgt)}")
    return list(zip(src, tgt))


def write_parallel(prefix, pairs: Sequence[tuple[str, str]]) -> None:
    prefix = str(prefix)
    Path(prefix + ".src").write_text("".join(s + "\n" for s, _ in pairs), encoding="utf-8")
    Path(prefix + ".tgt").write_text("".join(t + "\n" for _, t in pairs), encoding="utf-8")


def encode_pairs(pairs, src_vocab: Vocab, tgt_vocab: Vocab) -> list[tuple[list[int], list[int]]]:
    """Encode text pairs, dropping those with an empty side."""
    out = []
    for s, t in pairs:
        s_ids, t_ids = src_vocab.encode(s), tgt_vocab.encode(t)
        if s_ids and t_ids:
            out.append((s_ids, t_ids))
    return out


def make_batches(
    pairs: Sequence[tuple[Sequence[int], Sequence[int]]],
    batch_size: int,
    max_len: int | None = None,
    seed: int = 0,
    shuffle: bool = True,
) -> list[list[int]]:
    """Group pair indices into batches of similar source length.

    Pairs with either side longer than ``max_len`` are dropped with a
    warning.  Order is a pure function of ``seed``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    keep = [
        i for i, (s, t) in enumerate(pairs) if max_len is None or (len(s) <= max_len and len(t) <= max_len)
    ]
    dropped = len(pairs) - len(keep)
    if dropped:
        log.warning("dropped %d pairs longer than %d tokens", dropped, max_len)
    jitter = rng.permutation(len(keep)) if shuffle else np.arange(len(keep))
    order = sorted(range(len(keep)), key=lambda i: (len(pairs[keep[i]][0]), jitter[i]))
    batches = [[keep[i] for i in order[k : k + batch_size]] for k in range(0, len(order), batch_size)]
    if shuffle:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def padding_count(batch: Sequence[int], pairs) -> int:
    """Source padding tokens a batch would need if stacked to its longest sentence."""
    lens = [len(pairs[i][0]) for i in batch]
    return max(lens) * len(lens) - sum(lens)
