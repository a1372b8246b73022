"""Adam training of the negative segment-marginal log-likelihood."""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .data import Vocab, make_batches
from .decode import avg_segment_length, greedy_decode_batch
from .model import NPMT, ModelConfig

log = logging.getLogger(__name__)

MAGIC = b"NPMT"
FORMAT_VERSION = 1
_TYPE_TAGS = {np.dtype("<f4"): 1, np.dtype("<f8"): 2, np.dtype("<i8"): 3}
_TAG_TYPES = {v: k for k, v in _TYPE_TAGS.items()}


class NonFiniteGradientError(FloatingPointError):
    pass


class TrainingAborted(RuntimeError):
    def __init__(self, msg: str, last_good: Path | None):
        super().__init__(msg)
        self.last_good = last_good


@dataclass
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    dropout: float = 0.5
    max_segment_len: int = 6
    window: int = 7
    epochs: int = 10
    clip_norm: float = 5.0
    seed: int = 0
    emb_dim: int = 32
    tgt_emb_dim: int = 32
    enc_hidden: int = 64
    enc_layers: int = 1
    dec_hidden: int = 64
    dec_layers: int = 1
    max_len: int = 50
    dtype: str = "float32"
    plateau_halving: bool = False
    time_budget: float = 0.0  # seconds, 0 = unlimited

    def __post_init__(self):
        if min(self.lr, self.beta1, self.beta2, self.eps, self.clip_norm) < 0 or self.batch_size < 1:
            raise ValueError("rates and sizes must be positive")
        if self.max_segment_len < 1:
            raise ValueError("max_segment_len must be >= 1")

    def model_config(self, src_vocab: int, tgt_vocab: int) -> ModelConfig:
        return ModelConfig(
            src_vocab=src_vocab,
            tgt_vocab=tgt_vocab,
            emb_dim=self.emb_dim,
            tgt_emb_dim=self.tgt_emb_dim,
            enc_hidden=self.enc_hidden,
            enc_layers=self.enc_layers,
            dec_hidden=self.dec_hidden,
            dec_layers=self.dec_layers,
            window=self.window,
            max_segment_len=self.max_segment_len,
            dropout=self.dropout,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in types:
                raise KeyError(f"unknown training option {k!r}")
            t = types[k]
            if t == "bool":
                kw[k] = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes")
            elif t == "int":
                kw[k] = int(v)
            elif t == "float":
                kw[k] = float(v)
            else:
                kw[k] = str(v)
        return cls(**kw)


# ---------------------------------------------------------------------------
# optimizer


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    moments: dict[str, tuple[np.ndarray, np.ndarray]],
    t: int,
    cfg: TrainConfig,
) -> float:
    """One bias-corrected Adam update in place, after global-norm clipping.

    Rejects the whole step if any gradient entry is non-finite.
    """
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise nc.DimensionError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        bad = ~np.isfinite(g)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise NonFiniteGradientError(f"non-finite gradient in {name} at index {idx}: {g[idx]}")
    norm = clip_global_norm(grads, cfg.clip_norm)
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name, g in grads.items():
        m, v = moments.setdefault(name, (np.zeros_like(params[name]), np.zeros_like(params[name])))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        params[name] -= (cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(params[name].dtype)
    return norm


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model: NPMT
    train_cfg: TrainConfig
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    epoch: int = 0
    step: int = 0
    dev_loss: float = math.nan
    src_vocab: Vocab | None = None
    tgt_vocab: Vocab | None = None


def _config_block(ck: Checkpoint) -> str:
    lines = [f"model.{k}={v}" for k, v in ck.model.cfg.to_dict().items()]
    lines += [f"train.{k}={v}" for k, v in asdict(ck.train_cfg).items()]
    lines += [f"epoch={ck.epoch}", f"step={ck.step}", f"dev_loss={ck.dev_loss!r}"]
    for side, voc in (("src", ck.src_vocab), ("tgt", ck.tgt_vocab)):
        if voc is not None:
            lines.append(f"vocab.{side}=" + " ".join(voc.tokens))
    return "\n".join(lines)


def save_checkpoint(path, ck: Checkpoint) -> None:
    tensors = dict(ck.model.arrays())
    for name, (m, v) in ck.moments.items():
        tensors[f"adam.m.{name}"] = m
        tensors[f"adam.v.{name}"] = v
    cfg = _config_block(ck).encode("utf-8")
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(cfg)), cfg]
    out.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _TYPE_TAGS:
            raise TypeError(f"cannot store element type {arr.dtype} of {name}")
        key = name.encode("utf-8")
        out.append(struct.pack("<I", len(key)) + key)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(struct.pack("<B", _TYPE_TAGS[dt]) + arr.astype(dt).tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint (bad magic)")
    pos = 4

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, buf, pos)
        pos += struct.calcsize(fmt)
        return vals

    (version,) = take("<I")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (clen,) = take("<I")
    block = buf[pos : pos + clen].decode("utf-8")
    pos += clen
    kv = dict(line.split("=", 1) for line in block.split("\n") if line)
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = take("<I")
        dims = take(f"<{rank}Q") if rank else ()
        (tag,) = take("<B")
        dt = _TAG_TYPES[tag]
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(buf, dtype=dt, count=n, offset=pos).reshape(dims).copy()
        pos += n * dt.itemsize
        tensors[name] = arr

    mcfg = ModelConfig.from_dict({k[6:]: v for k, v in kv.items() if k.startswith("model.")})
    tcfg = TrainConfig.from_dict({k[6:]: v for k, v in kv.items() if k.startswith("train.")})
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    moments = {
        k[7:]: (v, tensors["adam.v." + k[7:]]) for k, v in tensors.items() if k.startswith("adam.m.")
    }
    vocabs = {side: Vocab(kv[f"vocab.{side}"].split(" ")) for side in ("src", "tgt") if f"vocab.{side}" in kv}
    return Checkpoint(
        NPMT(mcfg, params),
        tcfg,
        moments,
        int(kv.get("epoch", 0)),
        int(kv.get("step", 0)),
        float(kv.get("dev_loss", "nan")),
        vocabs.get("src"),
        vocabs.get("tgt"),
    )


# ---------------------------------------------------------------------------
# training


def batch_loss(model: NPMT, pairs, idx: Sequence[int], training: bool, rng) -> tuple[nc.Tensor, np.ndarray]:
    """Mean negative log-likelihood of a batch, recorded on the active tape."""
    src = [pairs[i][0] for i in idx]
    tgt = [pairs[i][1] for i in idx]
    ll = model.loglik(src, tgt, training, rng)
    return nc.mul(nc.sum_all(ll), -1.0 / len(idx)), ll.data


def compute_grads(model: NPMT, pairs, idx, rng) -> tuple[float, dict[str, np.ndarray]]:
    with nc.Tape() as tape:
        loss, _ = batch_loss(model, pairs, idx, True, rng)
    tape.backward(loss)
    return float(loss.data), {k: tape.gradient(t) for k, t in model.params.items()}


def evaluate(model: NPMT, pairs, batch_size: int = 64) -> dict:
    """Dev NLL per sentence, greedy exact-match and average segment length."""
    if not pairs:
        return {"nll": math.nan, "exact_match": math.nan, "avg_seg_len": math.nan}
    total, hits, outs = 0.0, 0, []
    for k in range(0, len(pairs), batch_size):
        chunk = pairs[k : k + batch_size]
        src = [s for s, _ in chunk]
        ll = model.loglik(src, [t for _, t in chunk])
        total -= float(np.sum(ll.data.astype(np.float64)))
        decoded = greedy_decode_batch(model.encode(src).data, [len(s) for s in src], model.decoder, model.swan_cfg)
        for (_, t), out in zip(chunk, decoded):
            hits += out.tokens == list(t)
        outs.extend(decoded)
    try:
        seg = avg_segment_length(outs)
    except ValueError:
        seg = math.nan
    return {"nll": total / len(pairs), "exact_match": hits / len(pairs), "avg_seg_len": seg}


@dataclass
class TrainResult:
    model: NPMT
    history: list[dict]
    best_path: Path | None
    best_dev_nll: float
    steps: int


def train_loop(
    model: NPMT,
    train_pairs,
    dev_pairs,
    cfg: TrainConfig,
    out_dir=None,
    src_vocab: Vocab | None = None,
    tgt_vocab: Vocab | None = None,
    max_steps: int | None = None,
) -> TrainResult:
    """Epochs of Adam over length-bucketed batches.

    Writes ``metrics.jsonl`` and ``epoch{N}.ckpt`` / ``best.ckpt`` into
    ``out_dir`` when given.  Deterministic for a fixed seed.
    """
    if not train_pairs or not dev_pairs:
        raise ValueError("training needs non-empty train and dev splits")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.jsonl").write_text("")
    rng = np.random.default_rng([cfg.seed, 7])
    params = {k: t.data for k, t in model.params.items()}
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    history: list[dict] = []
    best, best_path, last_good = math.inf, None, None
    step = 0
    lr_cfg = cfg
    start = time.monotonic()
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for idx in make_batches(train_pairs, cfg.batch_size, cfg.max_len, seed=cfg.seed * 1000 + epoch):
            loss, grads = compute_grads(model, train_pairs, idx, rng)
            step += 1
            adam_step(params, grads, moments, step, lr_cfg)
            losses.append(loss)
            if max_steps is not None and step >= max_steps:
                break
            if cfg.time_budget and time.monotonic() - start > cfg.time_budget:
                break
        dev = evaluate(model, dev_pairs)
        rec = {
            "epoch": epoch,
            "split": "dev",
            "train_nll": float(np.mean(losses)),
            "nll": dev["nll"],
            "exact_match": dev["exact_match"],
            "avg_seg_len": dev["avg_seg_len"],
            "steps": step,
        }
        history.append(rec)
        log.info("epoch %d train_nll=%.4f dev_nll=%.4f em=%.3f", epoch, rec["train_nll"], dev["nll"], dev["exact_match"])
        if out is not None:
            with open(out / "metrics.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"epoch": epoch, "split": "train", "nll": rec["train_nll"]}) + "\n")
                fh.write(json.dumps({k: rec[k] for k in ("epoch", "split", "nll", "exact_match", "avg_seg_len")}) + "\n")
        if not math.isfinite(dev["nll"]):
            raise TrainingAborted(f"dev NLL became {dev['nll']} at epoch {epoch}", last_good)
        if out is not None:
            ck = Checkpoint(model, cfg, moments, epoch, step, dev["nll"], src_vocab, tgt_vocab)
            last_good = out / f"epoch{epoch}.ckpt"
            save_checkpoint(last_good, ck)
            if dev["nll"] < best:
                best_path = out / "best.ckpt"
                save_checkpoint(best_path, ck)
        if cfg.plateau_halving and history[-1]["nll"] >= best and len(history) > 1:
            lr_cfg = TrainConfig.from_dict({**asdict(lr_cfg), "lr": lr_cfg.lr / 2})
        best = min(best, dev["nll"])
        if (max_steps is not None and step >= max_steps) or (
            cfg.time_budget and time.monotonic() - start > cfg.time_budget
        ):
            break
    return TrainResult(model, history, best_path, best, step)
