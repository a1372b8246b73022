"""Segment lattices and the exact marginal likelihood over segmentations.

Each source position ``t`` emits one segment (possibly empty) terminated by
the end-of-segment symbol.  ``p(y | x)`` sums the product of segment
probabilities over every way of cutting ``y`` into exactly ``T'`` segments.
The sum is computed by a forward recursion over a lattice of log segment
probabilities ``logp[t, j, k]`` (segment ``y[j:j+k]`` emitted by position
``t``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from . import _kernels
from . import numcore as nc
from .layers import GruParams, gru_cell
from .numcore import NEG_INF, Tensor

PAD_ID = 0
EOS_SEG_ID = 2


class UndefinedGradientError(ArithmeticError):
    pass


class InstanceTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class SwanConfig:
    max_segment_len: int = 6
    vocab_size: int = 0
    eos_id: int = EOS_SEG_ID

    def __post_init__(self):
        if self.max_segment_len < 1:
            raise ValueError("max_segment_len must be >= 1")


@dataclass
class SegmentDecoderParams:
    """Per-position segment RNN.

    ``init_W[l]``/``init_b[l]`` map a source feature to layer ``l``'s initial
    hidden state; ``start`` is the input at step 0; later steps read
    ``embedding[previous token]``.
    """

    init_W: list[Tensor]
    init_b: list[Tensor]
    start: Tensor
    embedding: Tensor
    layers: list[GruParams]
    out_W: Tensor
    out_b: Tensor

    def __post_init__(self):
        for W, g in zip(self.init_W, self.layers):
            if W.shape[0] != g.hidden:
                raise nc.DimensionError("initial projection width must equal decoder hidden width")

    @property
    def vocab_size(self) -> int:
        return self.out_W.shape[0]

    def initial_states(self, x: Tensor) -> list[Tensor]:
        return [nc.affine(W, x, b) for W, b in zip(self.init_W, self.init_b)]

    def step(self, inp: Tensor, states: list[Tensor]) -> tuple[Tensor, list[Tensor]]:
        """Advance every layer one token; returns (log-probs over vocab, new states)."""
        new = []
        h = inp
        for g, s in zip(self.layers, states):
            h = gru_cell(h, s, g)
            new.append(h)
        return nc.log_softmax(nc.affine(self.out_W, h, self.out_b)), new

    def start_input(self, n: int) -> Tensor:
        row = nc.reshape(self.start, (1, self.start.shape[0]))
        return nc.take(row, np.zeros(n, dtype=np.int64), axis=0)


@dataclass
class SegmentLattice:
    """``logp[t, j, k]``: log p(y[j:j+k] + $ | x_t); ``-inf`` where ``j + k > T``."""

    logp: np.ndarray

    @property
    def n_src(self) -> int:
        return self.logp.shape[0]

    @property
    def n_tgt(self) -> int:
        return self.logp.shape[1] - 1

    @property
    def max_len(self) -> int:
        return self.logp.shape[2] - 1


@dataclass
class LatticeLayout:
    """Row bookkeeping for a batch of sentences flattened into one lattice."""

    offsets: np.ndarray
    n_src: np.ndarray
    n_tgt: np.ndarray

    def block(self, flat: np.ndarray, b: int) -> np.ndarray:
        s = self.offsets[b]
        tp, tt = self.n_src[b], self.n_tgt[b]
        return flat[s : s + tp * (tt + 1)].reshape(tp, tt + 1, flat.shape[1])


def _layout(n_src: Sequence[int], n_tgt: Sequence[int]) -> LatticeLayout:
    n_src = np.asarray(n_src, dtype=np.int64)
    n_tgt = np.asarray(n_tgt, dtype=np.int64)
    sizes = n_src * (n_tgt + 1)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    return LatticeLayout(offsets, n_src, n_tgt)


def lattice_rows(
    x: Tensor, n_src: Sequence[int], targets: Sequence[Sequence[int]], cfg: SwanConfig, p: SegmentDecoderParams
) -> tuple[Tensor, LatticeLayout]:
    """Build the flat lattice for a batch on the active tape.

    ``x`` stacks the source features of all sentences: (sum(n_src), width).
    Decoder prefix states are shared across segment lengths: one pass of
    length ``min(L, T - j)`` from every (t, j) yields all ``k`` entries.
    """
    L = cfg.max_segment_len
    eos = cfg.eos_id
    layout = _layout(n_src, [len(y) for y in targets])
    pos_off = np.concatenate([[0], np.cumsum(layout.n_src)[:-1]])

    # per-row source position, start index j, remaining target length, next tokens
    src_idx, starts, remain, nxt = [], [], [], []
    for b, y in enumerate(targets):
        y = np.asarray(y, dtype=np.int64)
        tt, tp = len(y), int(layout.n_src[b])
        padded = np.concatenate([y, np.full(L + 1, PAD_ID, dtype=np.int64)])
        j = np.tile(np.arange(tt + 1), tp)
        src_idx.append(np.repeat(pos_off[b] + np.arange(tp), tt + 1))
        starts.append(j)
        remain.append(tt - j)
        nxt.append(padded[j[:, None] + np.arange(L)[None, :]])
    src_idx = np.concatenate(src_idx)
    remain = np.concatenate(remain)
    nxt = np.concatenate(nxt).reshape(-1, L)
    R = len(src_idx)

    init = p.initial_states(x)
    lp0, st0 = p.step(p.start_input(x.shape[0]), init)
    eos_cols = [nc.take(nc.gather_last(lp0, np.full((x.shape[0], 1), eos)), src_idx, axis=0)]
    eos_cols[0] = nc.reshape(eos_cols[0], (R,))

    tok_cols = []
    lp = nc.take(lp0, src_idx, axis=0)
    states = [nc.take(s, src_idx, axis=0) for s in st0]
    active = np.arange(R)
    for s in range(L):
        # rows that still have a target token y[j+s] to read
        keep = remain[active] > s
        if not keep.any():
            break
        sel = np.nonzero(keep)[0]
        nxt_active = active[sel]
        toks = nxt[nxt_active, s]
        tok_lp = nc.reshape(nc.gather_last(nc.take(lp, sel, axis=0, unique=True), toks[:, None]), (len(sel),))
        tok_cols.append(nc.scatter_rows(tok_lp, nxt_active, R, 0.0))
        states = [nc.take(h, sel, axis=0, unique=True) for h in states]
        lp, states = p.step(nc.take(p.embedding, toks, axis=0), states)
        active = nxt_active
        eos_lp = nc.reshape(nc.gather_last(lp, np.full((len(active), 1), eos)), (len(active),))
        eos_cols.append(nc.scatter_rows(eos_lp, active, R, NEG_INF))

    zero = Tensor(np.zeros(R, dtype=lp0.dtype))
    neg = Tensor(np.full(R, NEG_INF, dtype=lp0.dtype))
    while len(eos_cols) < L + 1:
        eos_cols.append(neg)
    eos_mat = nc.stack(eos_cols, axis=1)
    if tok_cols:
        prefix = nc.concat([nc.reshape(zero, (R, 1)), nc.cumsum(nc.stack(tok_cols, axis=1), axis=1)], axis=1)
        pad = L + 1 - prefix.shape[1]
        if pad:
            prefix = nc.concat([prefix, Tensor(np.zeros((R, pad), dtype=lp0.dtype))], axis=1)
        return nc.add(prefix, eos_mat), layout
    return eos_mat, layout


def build_segment_lattice(x: Tensor, y: Sequence[int], cfg: SwanConfig, p: SegmentDecoderParams) -> SegmentLattice:
    flat, layout = lattice_rows(x, [x.shape[0]], [list(y)], cfg, p)
    return SegmentLattice(layout.block(np.asarray(flat.data, dtype=np.float64), 0).copy())


def swan_loglik_rows(flat: Tensor, layout: LatticeLayout) -> Tensor:
    """Per-sentence log-likelihood (B,) of a flat lattice, differentiable.

    The backward pass multiplies the incoming gradient by the segment
    posteriors from the forward-backward recursion.
    """
    ll, post = _kernels.forward_backward(flat.data, layout.offsets, layout.n_src, layout.n_tgt)
    out = Tensor(ll.astype(flat.dtype))
    if not np.isfinite(ll).all() and nc.active_tape() is not None and flat.requires_grad:
        bad = int(np.nonzero(~np.isfinite(ll))[0][0])
        raise UndefinedGradientError(f"sentence {bad} has zero likelihood; gradient undefined")

    def backward(g):
        rows = np.repeat(g.astype(np.float64), layout.n_src * (layout.n_tgt + 1))
        return ((post * rows[:, None]).astype(flat.dtype),)

    return nc.record(out, (flat,), backward)


def swan_loglik(lat: SegmentLattice | np.ndarray, T: int | None = None) -> float:
    """log p(y | x) summed over all segmentations with exactly T' segments."""
    logp = lat.logp if isinstance(lat, SegmentLattice) else np.asarray(lat, dtype=np.float64)
    n_tgt = logp.shape[1] - 1 if T is None else T
    if logp.shape[0] == 0:
        return 0.0 if n_tgt == 0 else NEG_INF
    return float(_kernels.alpha_table(logp, n_tgt)[-1, n_tgt])


def alpha_table(lat: SegmentLattice | np.ndarray, T: int | None = None) -> np.ndarray:
    logp = lat.logp if isinstance(lat, SegmentLattice) else np.asarray(lat, dtype=np.float64)
    return _kernels.alpha_table(logp, logp.shape[1] - 1 if T is None else T)


def swan_grad(lat: SegmentLattice | np.ndarray, T: int | None = None) -> np.ndarray:
    """d loglik / d logp: posterior probability of each (t, j, k) segment."""
    logp = lat.logp if isinstance(lat, SegmentLattice) else np.asarray(lat, dtype=np.float64)
    n_tgt = logp.shape[1] - 1 if T is None else T
    tp, _, width = logp.shape
    ll, post = _kernels.forward_backward(logp.reshape(-1, width), [0], [tp], [n_tgt])
    if not np.isfinite(ll[0]):
        raise UndefinedGradientError("log-likelihood is -inf; gradient undefined")
    return post.reshape(logp.shape)


def _count_compositions(total: int, parts: int, cap: int) -> int:
    ways = [1] + [0] * total
    for _ in range(parts):
        nxt = [0] * (total + 1)
        for s, w in enumerate(ways):
            if w:
                for k in range(min(cap, total - s) + 1):
                    nxt[s + k] += w
        ways = nxt
    return ways[total]


def brute_force_loglik(lat: SegmentLattice | np.ndarray, T: int | None = None, limit: int = 10**6) -> float:
    """Enumerate every segmentation explicitly; test oracle for tiny lattices."""
    logp = lat.logp if isinstance(lat, SegmentLattice) else np.asarray(lat, dtype=np.float64)
    n_tgt = logp.shape[1] - 1 if T is None else T
    n_src, _, width = logp.shape
    L = width - 1
    count = _count_compositions(n_tgt, n_src, L)
    if count > limit:
        raise InstanceTooLargeError(f"{count} segmentations exceed the limit of {limit}")
    paths = []
    for lengths in product(range(L + 1), repeat=n_src):
        if sum(lengths) != n_tgt:
            continue
        j, total = 0, 0.0
        for t, k in enumerate(lengths):
            total += float(logp[t, j, k])
            j += k
        paths.append(total)
    if not paths:
        return NEG_INF
    m = max(paths)
    if m == NEG_INF:
        return NEG_INF
    return m + math.log(math.fsum(math.exp(v - m) for v in paths))


@dataclass
class SampledOutput:
    tokens: list[int]
    segments: list[list[int]]


def swan_sample(
    x: Tensor | np.ndarray, p: SegmentDecoderParams, cfg: SwanConfig, rng: np.random.Generator
) -> SampledOutput:
    """Draw one output: each position samples tokens until $ or L tokens, independently."""
    xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    n = xt.shape[0]
    L, eos = cfg.max_segment_len, cfg.eos_id
    lp, states = p.step(p.start_input(n), p.initial_states(xt))
    segments: list[list[int]] = [[] for _ in range(n)]
    live = np.arange(n)
    for s in range(L + 1):
        probs = np.exp(lp.data.astype(np.float64))
        if s == L:
            break
        cum = probs.cumsum(axis=1)
        u = rng.random(len(live))[:, None] * cum[:, -1:]
        draws = np.minimum((cum < u).sum(axis=1), probs.shape[1] - 1)
        going = draws != eos
        for pos, tok in zip(live[going], draws[going]):
            segments[pos].append(int(tok))
        if not going.any():
            break
        sel = np.nonzero(going)[0]
        live = live[sel]
        states = [Tensor(h.data[sel]) for h in states]
        lp, states = p.step(Tensor(p.embedding.data[draws[going]]), states)
    tokens = [tok for seg in segments for tok in seg]
    return SampledOutput(tokens, segments)
