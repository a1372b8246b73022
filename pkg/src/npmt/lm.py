"""Back-off n-gram language model: Kneser-Ney estimation and ARPA files.

Probabilities are stored as log10 values, as in the ARPA format, and turned
into natural logs only by :func:`lm_logprob`.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
LN10 = math.log(10.0)
NO_PROB = -99.0


class ArpaParseError(ValueError):
    def __init__(self, msg: str, lineno: int):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass
class ArpaModel:
    """``ngrams[n - 1]`` maps an n-gram tuple to ``(log10 prob, log10 backoff or None)``."""

    order: int
    ngrams: list[dict[tuple[str, ...], tuple[float, float | None]]] = field(default_factory=list)

    @property
    def vocab(self) -> set[str]:
        return {g[0] for g in self.ngrams[0]}

    def predicted_vocab(self) -> list[str]:
        return sorted(w for w in self.vocab if w != BOS)

    def score10(self, context: Sequence[str], word: str) -> float:
        """log10 p(word | context) by the back-off rule."""
        uni = self.ngrams[0]
        if (word,) not in uni:
            word = UNK
        context = tuple(context)[-(self.order - 1) :] if self.order > 1 else ()
        context = tuple(w if (w,) in uni else UNK for w in context)
        bow = 0.0
        while True:
            n = len(context) + 1
            hit = self.ngrams[n - 1].get(context + (word,))
            if hit is not None:
                return bow + hit[0]
            if not context:
                return bow + NO_PROB
            ctx = self.ngrams[n - 2].get(context)
            if ctx is not None and ctx[1] is not None:
                bow += ctx[1]
            context = context[1:]


def _pad(sentence: Sequence) -> list[str]:
    return [BOS] + [str(w) for w in sentence] + [EOS]


def train_ngram(corpus: Iterable[Sequence], order: int = 4, discount: float = 0.75) -> ArpaModel:
    """Interpolated Kneser-Ney with one absolute discount for every order.

    The highest order uses raw counts; lower orders use the number of
    distinct left extensions, except n-grams starting with ``<s>``, which
    cannot be extended and keep raw counts.  The unigram level interpolates
    with a uniform distribution, which also gives ``<unk>`` its mass.
    """
    if not 1 <= order <= 4:
        raise ValueError(f"order must be in [1, 4], got {order}")
    if not 0.0 < discount < 1.0:
        raise ValueError(f"discount must be in (0, 1), got {discount}")
    sents = [_pad(s) for s in corpus]
    if not sents:
        raise ValueError("cannot train a language model on an empty corpus")

    raw: list[dict[tuple[str, ...], int]] = [defaultdict(int) for _ in range(order)]
    for s in sents:
        for n in range(1, order + 1):
            for i in range(len(s) - n + 1):
                raw[n - 1][tuple(s[i : i + n])] += 1

    adjusted: list[dict[tuple[str, ...], int]] = [dict() for _ in range(order)]
    adjusted[order - 1] = dict(raw[order - 1])
    for n in range(1, order):
        ext: dict[tuple[str, ...], int] = defaultdict(int)
        for g in raw[n]:
            ext[g[1:]] += 1
        adjusted[n - 1] = {g: (c if g[0] == BOS else ext[g]) for g, c in raw[n - 1].items()}

    vocab = sorted({g[0] for g in raw[0]} - {BOS} | {UNK, EOS})
    probs: list[dict[tuple[str, ...], float]] = [dict() for _ in range(order)]
    gammas: list[dict[tuple[str, ...], float]] = [dict() for _ in range(order)]

    for n in range(1, order + 1):
        totals: dict[tuple[str, ...], int] = defaultdict(int)
        types: dict[tuple[str, ...], int] = defaultdict(int)
        for g, c in adjusted[n - 1].items():
            if g[-1] == BOS:
                continue
            totals[g[:-1]] += c
            types[g[:-1]] += 1
        for h, tot in totals.items():
            gammas[n - 1][h] = discount * types[h] / tot
        if n == 1:
            tot, gamma = totals[()], gammas[0][()]
            for w in vocab:
                c = adjusted[0].get((w,), 0)
                probs[0][(w,)] = max(c - discount, 0.0) / tot + gamma / len(vocab)
            continue
        for g, c in adjusted[n - 1].items():
            if g[-1] == BOS:
                continue
            h = g[:-1]
            lower = probs[n - 2][g[1:]]
            probs[n - 1][g] = (c - discount) / totals[h] + gammas[n - 1][h] * lower

    model = ArpaModel(order, [dict() for _ in range(order)])
    for n in range(1, order + 1):
        table = model.ngrams[n - 1]
        for g, pr in sorted(probs[n - 1].items()):
            bow = gammas[n][g] if n < order and g in gammas[n] else None
            table[g] = (math.log10(pr), None if bow is None else math.log10(bow))
        if n == 1:
            bow = gammas[1].get((BOS,)) if order > 1 else None
            table[(BOS,)] = (NO_PROB, None if bow is None else math.log10(bow))
    return model


def _fmt(v: float) -> str:
    return f"{v:.7g}"


def write_arpa(model: ArpaModel, path) -> None:
    lines = ["", "\\data\\"]
    for n in range(1, model.order + 1):
        lines.append(f"ngram {n}={len(model.ngrams[n - 1])}")
    for n in range(1, model.order + 1):
        lines += ["", f"\\{n}-grams:"]
        for g, (lp, bow) in sorted(model.ngrams[n - 1].items()):
            fields = [_fmt(lp), " ".join(g)]
            if bow is not None and n < model.order:
                fields.append(_fmt(bow))
            lines.append("\t".join(fields))
    lines += ["", "\\end\\", ""]
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def read_arpa(path) -> ArpaModel:
    counts: dict[int, int] = {}
    model: ArpaModel | None = None
    section = None  # None, "data", or an order
    seen_end = False
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line == "\\data\\":
                section = "data"
                continue
            if line == "\\end\\":
                seen_end = True
                break
            if line.startswith("\\") and line.endswith("-grams:"):
                try:
                    n = int(line[1 : -len("-grams:")])
                except ValueError:
                    raise ArpaParseError(f"bad section header {line!r}", lineno) from None
                if n not in counts:
                    raise ArpaParseError(f"section for order {n} not declared in \\data\\", lineno)
                if model is None:
                    model = ArpaModel(max(counts), [dict() for _ in range(max(counts))])
                if isinstance(section, int) and len(model.ngrams[section - 1]) != counts[section]:
                    raise ArpaParseError(
                        f"{section}-grams: header says {counts[section]}, found {len(model.ngrams[section - 1])}", lineno
                    )
                section = n
                continue
            if section == "data":
                if not line.startswith("ngram ") or "=" not in line:
                    raise ArpaParseError(f"expected 'ngram N=count', got {line!r}", lineno)
                n, c = line[len("ngram ") :].split("=", 1)
                counts[int(n)] = int(c)
                continue
            if not isinstance(section, int) or model is None:
                raise ArpaParseError(f"unexpected line outside any section: {line!r}", lineno)
            parts = line.split("\t") if "\t" in line else line.split()
            if "\t" not in line:
                # whitespace-separated: prob, n words, optional backoff
                parts = [parts[0], " ".join(parts[1 : 1 + section])] + parts[1 + section :]
            try:
                lp = float(parts[0])
                bow = float(parts[2]) if len(parts) > 2 else None
            except (ValueError, IndexError):
                raise ArpaParseError(f"malformed n-gram entry {line!r}", lineno) from None
            words = tuple(parts[1].split(" "))
            if len(words) != section:
                raise ArpaParseError(f"expected {section} words, got {len(words)}", lineno)
            model.ngrams[section - 1][words] = (lp, bow)
    if model is None:
        raise ArpaParseError("no n-gram sections found", lineno if counts else 1)
    if not seen_end:
        raise ArpaParseError("missing \\end\\ marker", lineno)
    if isinstance(section, int) and len(model.ngrams[section - 1]) != counts[section]:
        raise ArpaParseError(
            f"{section}-grams: header says {counts[section]}, found {len(model.ngrams[section - 1])}", lineno
        )
    return model


def lm_logprob(model: ArpaModel, sentence: Sequence, eos: bool = True) -> float:
    """Natural-log probability of ``sentence``, with ``<s>`` padding.

    With ``eos=False`` the sentence end is not scored, which gives the
    score of a prefix.
    """
    words = [str(w) for w in sentence] + ([EOS] if eos else [])
    hist = [BOS]
    total = 0.0
    for w in words:
        total += model.score10(hist, w)
        hist.append(w)
    return total * LN10
