"""Greedy and beam decoding for the segment model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .numcore import Tensor
from .swan import SegmentDecoderParams, SwanConfig


class ConfigurationError(ValueError):
    pass


class UndefinedLengthError(ValueError):
    pass


@dataclass
class SegmentedOutput:
    """Output tokens plus the segment each source position emitted."""

    segments: list[list[int]]

    @property
    def tokens(self) -> list[int]:
        return [tok for seg in self.segments for tok in seg]

    @property
    def n_src(self) -> int:
        return len(self.segments)

    def spans(self) -> list[tuple[int, int, int]]:
        """(source position, start, end) for every non-empty segment."""
        out, j = [], 0
        for t, seg in enumerate(self.segments):
            if seg:
                out.append((t, j, j + len(seg)))
            j += len(seg)
        return out


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def greedy_decode(x, p: SegmentDecoderParams, cfg: SwanConfig) -> SegmentedOutput:
    """Every position emits its argmax segment independently, batched over positions.

    Ties go to the lowest token id.  After ``L`` tokens the segment is closed.
    """
    return greedy_decode_batch(_as_array(x), [len(_as_array(x))], p, cfg)[0]


def greedy_decode_batch(x: np.ndarray, n_src: Sequence[int], p: SegmentDecoderParams, cfg: SwanConfig):
    """Greedy decode many sentences whose source features are stacked row-wise."""
    x = _as_array(x)
    n = x.shape[0]
    L, eos = cfg.max_segment_len, cfg.eos_id
    xt = Tensor(x)
    lp, states = p.step(p.start_input(n), p.initial_states(xt))
    segments: list[list[int]] = [[] for _ in range(n)]
    live = np.arange(n)
    for _ in range(L):
        best = np.argmax(lp.data, axis=1)
        going = best != eos
        if not going.any():
            break
        live = live[going]
        toks = best[going]
        for pos, tok in zip(live.tolist(), toks.tolist()):
            segments[pos].append(tok)
        states = [Tensor(h.data[going]) for h in states]
        lp, states = p.step(Tensor(p.embedding.data[toks]), states)
    outs, s = [], 0
    for m in n_src:
        outs.append(SegmentedOutput(segments[s : s + m]))
        s += m
    return outs


def segment_candidates(x_t, width: int, cfg: SwanConfig, p: SegmentDecoderParams) -> list[tuple[tuple[int, ...], float]]:
    """Beam over one position's segment decoder; returns finished (segment, log-prob).

    Extensions of all live prefixes, including closing with ``$``, are ranked
    jointly and the best ``width`` survive, so ``width=1`` reproduces the
    greedy segment.  For ``width >= 2`` the empty segment is always returned.
    Log-probs include the closing ``$`` and so equal the lattice entries.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    L, eos = cfg.max_segment_len, cfg.eos_id
    x_t = _as_array(x_t).reshape(1, -1)
    lp, states = p.step(p.start_input(1), p.initial_states(Tensor(x_t)))
    empty_lp = float(lp.data[0, eos])
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: dict[tuple[int, ...], float] = {}
    for s in range(L + 1):
        logp = lp.data.astype(np.float64)
        ext = []
        for i, (seq, score) in enumerate(live):
            if s == L:
                ext.append((score + logp[i, eos], seq, eos, i))
                continue
            for v in range(logp.shape[1]):
                ext.append((score + logp[i, v], seq, v, i))
        ext.sort(key=lambda e: (-e[0], e[1] + (e[2],)))
        nxt_live, rows, toks = [], [], []
        for score, seq, v, i in ext[:width]:
            if v == eos:
                finished[seq] = score
            else:
                nxt_live.append((seq + (v,), score))
                rows.append(i)
                toks.append(v)
        if not nxt_live:
            break
        live = nxt_live
        states = [Tensor(h.data[rows]) for h in states]
        lp, states = p.step(Tensor(p.embedding.data[toks]), states)
    if width >= 2 and () not in finished:
        finished[()] = empty_lp
    return sorted(finished.items(), key=lambda kv: (-kv[1], len(kv[0]), kv[0]))


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float
    segments: list[tuple[int, ...]] = field(default_factory=list)
    lm_logprob: float | None = None
    best_path: float = -math.inf

    @property
    def word_count(self) -> int:
        return len(self.tokens)


@dataclass
class BeamScorer:
    """Word-count bonus ``lambda1`` and LM weight ``lambda2``.

    ``lm_score(tokens, final)`` returns a natural-log LM probability of the
    target ids; ``final`` adds the sentence end.
    """

    lambda1: float = 0.0
    lambda2: float = 0.0
    lm_score: Callable[[Sequence[int], bool], float] | None = None

    def __post_init__(self):
        if self.lm_score is None and self.lambda2 != 0.0:
            raise ConfigurationError("lambda2 is non-zero but no language model was given")


def score_hypothesis(h: Hypothesis, s: BeamScorer) -> float:
    """Q(y) = log p(y|x) + lambda1 * word_count(y) + lambda2 * log p_lm(y)."""
    q = h.logprob + s.lambda1 * h.word_count
    if s.lambda2 != 0.0:
        lm = h.lm_logprob
        if lm is None:
            if s.lm_score is None:
                raise ConfigurationError("lambda2 is non-zero but no language model was given")
            lm = s.lm_score(h.tokens, True)
        q += s.lambda2 * lm
    return q


def beam_decode(
    x,
    width: int,
    scorer: BeamScorer,
    cfg: SwanConfig,
    p: SegmentDecoderParams,
    merge: bool = True,
    candidates: list[list[tuple[tuple[int, ...], float]]] | None = None,
) -> SegmentedOutput:
    return beam_search(x, width, scorer, cfg, p, merge, candidates)[0]


def beam_search(x, width, scorer, cfg, p, merge=True, candidates=None):
    """Position-synchronous beam; returns (best output, final ranked hypotheses).

    Hypotheses reaching the same output at the same position are merged by
    log-sum-exp of model log-prob when ``merge`` is on, else the better path
    is kept.  Pruning uses model log-prob plus the word bonus and the LM
    score of the prefix; the final ranking uses :func:`score_hypothesis`.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    xs = _as_array(x)
    if candidates is None:
        candidates = [segment_candidates(xs[t], width, cfg, p) for t in range(xs.shape[0])]
    lm_cache: dict[tuple[int, ...], float] = {}

    def prefix_lm(tokens):
        if scorer.lambda2 == 0.0:
            return 0.0
        if tokens not in lm_cache:
            lm_cache[tokens] = scorer.lm_score(tokens, False)
        return lm_cache[tokens]

    beam = [Hypothesis((), 0.0, [], best_path=0.0)]
    for cands in candidates:
        pool: dict[tuple[int, ...], Hypothesis] = {}
        for h in beam:
            for seg, slp in cands:
                toks = h.tokens + seg
                path = h.best_path + slp
                lp = h.logprob + slp
                old = pool.get(toks)
                if old is None:
                    pool[toks] = Hypothesis(toks, lp, h.segments + [seg], best_path=path)
                    continue
                better = path > old.best_path
                old.logprob = float(np.logaddexp(old.logprob, lp)) if merge else max(old.logprob, lp)
                if better:
                    old.segments = h.segments + [seg]
                    old.best_path = path
        ranked = sorted(
            pool.values(),
            key=lambda h: (-(h.logprob + scorer.lambda1 * h.word_count + scorer.lambda2 * prefix_lm(h.tokens)), h.tokens),
        )
        beam = ranked[:width]
    final = sorted(beam, key=lambda h: (-score_hypothesis(h, scorer), h.tokens))
    best = final[0]
    return SegmentedOutput([list(s) for s in best.segments]), final


def avg_segment_length(out: SegmentedOutput | Sequence[SegmentedOutput]) -> float:
    """Output tokens divided by the number of non-empty segments."""
    outs = [out] if isinstance(out, SegmentedOutput) else list(out)
    n_tok = sum(len(seg) for o in outs for seg in o.segments)
    n_seg = sum(1 for o in outs for seg in o.segments if seg)
    if n_seg == 0:
        raise UndefinedLengthError("average segment length is undefined without non-empty segments")
    return n_tok / n_seg


def format_segments(out: SegmentedOutput, words: Callable[[int], str] = str, bullet: str = "•") -> str:
    """``1:thank you • 2:, • ...`` with 1-based source positions of non-empty segments."""
    groups = [f"{t + 1}:{' '.join(words(w) for w in seg)}" for t, seg in enumerate(out.segments) if seg]
    return f" {bullet} ".join(groups)


def trace_lines(src_words: Sequence[str], out: SegmentedOutput, words: Callable[[int], str]) -> list[str]:
    """TSV rows ``index<TAB>source token<TAB>segment`` (``$`` for an empty segment)."""
    rows = []
    for t, (w, seg) in enumerate(zip(src_words, out.segments)):
        text = " ".join(words(v) for v in seg) if seg else "$"
        rows.append(f"{t + 1}\t{w}\t{text}")
    return rows


def read_trace(path) -> list[list[tuple[int, str, list[str]]]]:
    """Parse a trace file; sentences are separated by blank lines."""
    sents, cur = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                if cur:
                    sents.append(cur)
                    cur = []
                continue
            idx, src, seg = line.split("\t")
            cur.append((int(idx), src, [] if seg == "$" else seg.split(" ")))
    if cur:
        sents.append(cur)
    return sents
