"""Corpus-level BLEU with brevity penalty."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _tok(line) -> list[str]:
    return line.split() if isinstance(line, str) else list(line)


def bleu(candidates, references, max_n: int = 4, smooth: bool = False) -> float:
    """Corpus BLEU in [0, 100]; one reference per candidate.

    With ``smooth`` the n-gram counts for n >= 2 get +1 in numerator and
    denominator; otherwise any zero precision gives 0.
    """
    cands = [_tok(c) for c in candidates]
    refs = [_tok(r) for r in references]
    if not cands:
        raise ValueError("empty candidate corpus")
    if len(cands) != len(refs):
        raise ValueError(f"{len(cands)} candidates but {len(refs)} references")
    match = [0] * max_n
    total = [0] * max_n
    c_len = r_len = 0
    for c, r in zip(cands, refs):
        c_len += len(c)
        r_len += len(r)
        for n in range(1, max_n + 1):
            cc, rc = _ngrams(c, n), _ngrams(r, n)
            match[n - 1] += sum(min(v, rc[g]) for g, v in cc.items())
            total[n - 1] += max(len(c) - n + 1, 0)
    if c_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_n):
        m, t = match[n], total[n]
        if smooth and n > 0:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_p += math.log(m / t) / max_n
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return 100.0 * bp * math.exp(log_p)
