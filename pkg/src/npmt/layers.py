"""Source-side layers: embeddings, gated local reordering, GRU encoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .numcore import Tensor


class OutOfVocabError(IndexError):
    pass


class EmptyInputError(ValueError):
    pass


@dataclass
class ReorderingParams:
    """Gate weights for a window of ``2 * tau + 1`` embeddings.

    ``w`` has one row per window slot; each row has ``(2 * tau + 1) * d``
    entries and scores the whole concatenated window.
    """

    tau: int
    w: Tensor

    def __post_init__(self):
        size = 2 * self.tau + 1
        if self.w.shape[0] != size or self.w.shape[1] % size:
            raise nc.DimensionError(f"gate weights {self.w.shape} do not match window size {size}")

    @property
    def window(self) -> int:
        return 2 * self.tau + 1

    @property
    def dim(self) -> int:
        return self.w.shape[1] // self.window


@dataclass
class GruParams:
    """GRU weights stacked by gate in the order update (z), reset (r), candidate (n).

    W: (3H, din) input weights, U: (3H, H) recurrent weights, b: (3H,) input bias.
    """

    W: Tensor
    U: Tensor
    b: Tensor

    def __post_init__(self):
        h3, hid = self.U.shape
        if h3 != 3 * hid or self.W.shape[0] != h3 or self.b.shape != (h3,):
            raise nc.DimensionError(
                f"inconsistent GRU shapes W={self.W.shape} U={self.U.shape} b={self.b.shape}"
            )

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]


@dataclass
class EncoderStack:
    embedding: Tensor
    reordering: ReorderingParams | None
    layers: list[tuple[GruParams, GruParams]]
    dropout: list[float] = field(default_factory=list)

    def __post_init__(self):
        width = self.embedding.shape[1]
        if self.reordering is not None and self.reordering.dim != width:
            raise nc.DimensionError("reordering window width does not match embedding width")
        for fwd, bwd in self.layers:
            if fwd.input_dim != width or bwd.input_dim != width or fwd.hidden != bwd.hidden:
                raise nc.DimensionError("encoder layer widths do not chain")
            width = 2 * fwd.hidden
        if not self.dropout:
            self.dropout = [0.0] * len(self.layers)

    @property
    def output_dim(self) -> int:
        return 2 * self.layers[-1][0].hidden if self.layers else self.embedding.shape[1]


def embed(tokens, table: Tensor) -> Tensor:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.size and (ids.max() >= table.shape[0] or ids.min() < 0):
        raise OutOfVocabError(f"token id {int(ids.max())} outside table of {table.shape[0]} rows")
    if ids.size == 0:
        return Tensor(np.zeros(ids.shape + (table.shape[1],), dtype=table.dtype))
    return nc.take(table, ids, axis=0)


def _windows(e: Tensor, tau: int) -> Tensor:
    """(..., T, d) -> (..., T, 2tau+1, d) with zero vectors past both edges."""
    if tau == 0:
        return nc.reshape(e, e.shape[:-1] + (1, e.shape[-1]))
    pad = Tensor(np.zeros(e.shape[:-2] + (tau, e.shape[-1]), dtype=e.dtype))
    padded = nc.concat([pad, e, pad], axis=-2)
    n = e.shape[-2]
    idx = np.arange(n)[:, None] + np.arange(2 * tau + 1)[None, :]
    return nc.take(padded, idx, axis=-2)


def reorder_with_gates(e: Tensor, p: ReorderingParams) -> tuple[Tensor, Tensor]:
    """Soft local reordering; also returns the (..., T, 2tau+1) gate values."""
    win = _windows(e, p.tau)
    flat = nc.reshape(win, win.shape[:-2] + (win.shape[-2] * win.shape[-1],))
    gates = nc.sigmoid(nc.affine(p.w, flat))
    weighted = nc.mul(win, nc.reshape(gates, gates.shape + (1,)))
    return nc.tanh(nc.sum_axis(weighted, -2)), gates


def reorder(e: Tensor, p: ReorderingParams) -> Tensor:
    return reorder_with_gates(e, p)[0]


def gru_cell(x: Tensor, h: Tensor, p: GruParams) -> Tensor:
    """One GRU step, fused into a single tape op.

    z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
    n = tanh(Wn x + r * (Un h) + bn), h' = (1 - z) * n + z * h.
    """
    H = p.hidden
    a = x.data @ p.W.data.T + p.b.data
    u = h.data @ p.U.data.T
    z = nc._sigmoid(a[..., :H] + u[..., :H])
    r = nc._sigmoid(a[..., H : 2 * H] + u[..., H : 2 * H])
    un = u[..., 2 * H :]
    n = np.tanh(a[..., 2 * H :] + r * un)
    out = Tensor((1.0 - z) * n + z * h.data)

    def backward(g):
        dn = g * (1.0 - z)
        dz = g * (h.data - n)
        dan = dn * (1.0 - n * n)
        dr = dan * un
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dA = np.empty(a.shape, dtype=a.dtype)
        dA[..., :H] = daz
        dA[..., H : 2 * H] = dar
        dA[..., 2 * H :] = dan
        dUpre = dA.copy()
        dUpre[..., 2 * H :] *= r
        A2 = dA.reshape(-1, 3 * H)
        U2 = dUpre.reshape(-1, 3 * H)
        gW = A2.T @ x.data.reshape(-1, x.shape[-1])
        gU = U2.T @ h.data.reshape(-1, H)
        gb = A2.sum(axis=0)
        gx = dA @ p.W.data if x.requires_grad else None
        gh = g * z + dUpre @ p.U.data if h.requires_grad else None
        return gx, gh, gW, gU, gb

    return nc.record(out, (x, h, p.W, p.U, p.b), backward)


def run_gru(xs: Tensor, p: GruParams, reverse: bool = False) -> Tensor:
    """Run a GRU over axis -2 of (..., T, din); returns (..., T, H)."""
    n = xs.shape[-2]
    h = Tensor(np.zeros(xs.shape[:-2] + (p.hidden,), dtype=xs.dtype))
    outs: list[Tensor] = [None] * n  # type: ignore[list-item]
    steps = range(n - 1, -1, -1) if reverse else range(n)
    for t in steps:
        h = gru_cell(nc.take(xs, t, axis=-2, unique=True), h, p)
        outs[t] = h
    return nc.stack(outs, axis=-2)


def encode_batch(
    tokens: np.ndarray,
    enc: EncoderStack,
    training: bool = False,
    rng: np.random.Generator | None = None,
    return_gates: bool = False,
):
    """Encode equal-length sentences (B, T') -> (B, T', output_dim)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2 or tokens.shape[1] == 0:
        raise EmptyInputError("cannot encode an empty source sentence")
    x = embed(tokens, enc.embedding)
    gates = None
    if enc.reordering is not None:
        x, gates = reorder_with_gates(x, enc.reordering)
    for (fwd, bwd), rate in zip(enc.layers, enc.dropout):
        x = nc.concat([run_gru(x, fwd), run_gru(x, bwd, reverse=True)], axis=-1)
        x = nc.dropout(x, rate, rng, training)
    return (x, gates) if return_gates else x


def encode_source(tokens, enc: EncoderStack, training: bool = False, rng=None) -> Tensor:
    """Encode one sentence into (T', 2H) source features."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        raise EmptyInputError("cannot encode an empty source sentence")
    out = encode_batch(tokens[None, :], enc, training, rng)
    return nc.take(out, 0, axis=0)
