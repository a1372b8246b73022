"""The full model: embeddings, reordering, bi-GRU encoder, segment decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import numcore as nc
from .layers import EncoderStack, GruParams, ReorderingParams, encode_batch
from .numcore import Tensor
from .swan import EOS_SEG_ID, SegmentDecoderParams, SwanConfig, lattice_rows, swan_loglik_rows


@dataclass
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    emb_dim: int = 32
    tgt_emb_dim: int = 32
    enc_hidden: int = 64
    enc_layers: int = 1
    dec_hidden: int = 64
    dec_layers: int = 1
    window: int = 7  # 0 disables the reordering layer
    max_segment_len: int = 6
    dropout: float = 0.5

    def __post_init__(self):
        if self.window and self.window % 2 == 0:
            raise ValueError(f"window size must be odd, got {self.window}")

    @property
    def tau(self) -> int:
        return (self.window - 1) // 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k in names:
                kw[k] = float(v) if k == "dropout" else int(v)
        return cls(**kw)


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=None) -> dict[str, np.ndarray]:
    """Uniform(-0.1, 0.1) weights, zero biases."""
    dtype = dtype or nc.get_dtype()

    def u(*shape):
        return rng.uniform(-0.1, 0.1, size=shape).astype(dtype)

    def z(*shape):
        return np.zeros(shape, dtype=dtype)

    p: dict[str, np.ndarray] = {"src.embedding": u(cfg.src_vocab, cfg.emb_dim)}
    if cfg.window:
        size = cfg.window
        p["reorder.w"] = u(size, size * cfg.emb_dim)
    width = cfg.emb_dim
    H = cfg.enc_hidden
    for layer in range(cfg.enc_layers):
        for d in ("fwd", "bwd"):
            p[f"enc.{layer}.{d}.W"] = u(3 * H, width)
            p[f"enc.{layer}.{d}.U"] = u(3 * H, H)
            p[f"enc.{layer}.{d}.b"] = z(3 * H)
        width = 2 * H
    Hd = cfg.dec_hidden
    for layer in range(cfg.dec_layers):
        p[f"dec.init.{layer}.W"] = u(Hd, width)
        p[f"dec.init.{layer}.b"] = z(Hd)
    p["dec.start"] = u(cfg.tgt_emb_dim)
    p["dec.embedding"] = u(cfg.tgt_vocab, cfg.tgt_emb_dim)
    din = cfg.tgt_emb_dim
    for layer in range(cfg.dec_layers):
        p[f"dec.{layer}.W"] = u(3 * Hd, din)
        p[f"dec.{layer}.U"] = u(3 * Hd, Hd)
        p[f"dec.{layer}.b"] = z(3 * Hd)
        din = Hd
    p["dec.out.W"] = u(cfg.tgt_vocab, Hd)
    p["dec.out.b"] = z(cfg.tgt_vocab)
    return p


class NPMT:
    """Parameters plus the glue to encode, score and decode batches."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
        self.swan_cfg = SwanConfig(cfg.max_segment_len, cfg.tgt_vocab, EOS_SEG_ID)

    @classmethod
    def create(cls, cfg: ModelConfig, seed: int = 0, dtype=None) -> "NPMT":
        return cls(cfg, init_params(cfg, np.random.default_rng(seed), dtype))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    @property
    def encoder(self) -> EncoderStack:
        p, c = self.params, self.cfg
        reo = ReorderingParams(c.tau, p["reorder.w"]) if c.window else None
        layers = [
            tuple(GruParams(p[f"enc.{i}.{d}.W"], p[f"enc.{i}.{d}.U"], p[f"enc.{i}.{d}.b"]) for d in ("fwd", "bwd"))
            for i in range(c.enc_layers)
        ]
        return EncoderStack(p["src.embedding"], reo, layers, [c.dropout] * c.enc_layers)

    @property
    def decoder(self) -> SegmentDecoderParams:
        p, c = self.params, self.cfg
        return SegmentDecoderParams(
            init_W=[p[f"dec.init.{i}.W"] for i in range(c.dec_layers)],
            init_b=[p[f"dec.init.{i}.b"] for i in range(c.dec_layers)],
            start=p["dec.start"],
            embedding=p["dec.embedding"],
            layers=[GruParams(p[f"dec.{i}.W"], p[f"dec.{i}.U"], p[f"dec.{i}.b"]) for i in range(c.dec_layers)],
            out_W=p["dec.out.W"],
            out_b=p["dec.out.b"],
        )

    def encode(
        self, sources: Sequence[Sequence[int]], training: bool = False, rng: np.random.Generator | None = None
    ) -> Tensor:
        """Source features for all sentences stacked row-wise, in input order.

        Sentences are grouped by length so no padding enters the recurrences.
        """
        enc = self.encoder
        lengths = np.array([len(s) for s in sources])
        offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        parts, order = [], []
        for n in sorted(set(lengths.tolist())):
            members = np.nonzero(lengths == n)[0]
            toks = np.array([sources[i] for i in members], dtype=np.int64)
            out = encode_batch(toks, enc, training, rng)
            parts.append(nc.reshape(out, (len(members) * n, out.shape[-1])))
            order.extend((offsets[i] + np.arange(n)).tolist() for i in members)
        stacked = nc.concat(parts, axis=0) if len(parts) > 1 else parts[0]
        flat_order = np.concatenate([np.asarray(o) for o in order])
        inverse = np.empty_like(flat_order)
        inverse[flat_order] = np.arange(len(flat_order))
        return nc.take(stacked, inverse, axis=0, unique=True)

    def loglik(
        self,
        sources: Sequence[Sequence[int]],
        targets: Sequence[Sequence[int]],
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Per-sentence log p(y | x), shape (B,), on the active tape."""
        x = self.encode(sources, training, rng)
        flat, layout = lattice_rows(x, [len(s) for s in sources], targets, self.swan_cfg, self.decoder)
        return swan_loglik_rows(flat, layout)

    def split_features(self, x: Tensor | np.ndarray, sources: Sequence[Sequence[int]]) -> list[np.ndarray]:
        data = x.data if isinstance(x, Tensor) else x
        bounds = np.cumsum([len(s) for s in sources])[:-1]
        return np.split(data, bounds, axis=0)
