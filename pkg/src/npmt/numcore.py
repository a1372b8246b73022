"""Dense arrays with a minimal reverse-mode tape.

Every primitive below computes its forward value with numpy and, when a
:class:`Tape` is active, appends a backward closure to it.  ``Tape.backward``
replays the closures in exact reverse order.  Nothing is fused or optimized.

The element type of freshly created arrays follows :func:`get_dtype`; use
``float32`` for training and ``float64`` for gradient checks.
"""

from __future__ import annotations

import contextlib
import os
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

NEG_INF = -np.inf

_DTYPES = {"float32": np.float32, "float64": np.float64}
_state = threading.local()


def _default_dtype_name() -> str:
    name = os.environ.get("NPMT_DTYPE", "float64")
    if name not in _DTYPES:
        raise ValueError(f"NPMT_DTYPE must be one of {sorted(_DTYPES)}, got {name!r}")
    return name


def get_dtype() -> type:
    return _DTYPES[getattr(_state, "dtype", None) or _default_dtype_name()]


def set_dtype(name: str) -> None:
    if name not in _DTYPES:
        raise ValueError(f"unknown element type {name!r}")
    _state.dtype = name


@contextlib.contextmanager
def using_dtype(name: str):
    """Temporarily switch the element type of newly created arrays."""
    old = getattr(_state, "dtype", None)
    set_dtype(name)
    try:
        yield
    finally:
        _state.dtype = old


class DimensionError(ValueError):
    pass


class EvaluationError(ArithmeticError):
    pass


class Tensor:
    """A dense array that may participate in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.data.dtype})"

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def tensor(data, requires_grad: bool = False, name: str | None = None, dtype=None) -> Tensor:
    arr = np.array(data, dtype=dtype or get_dtype())
    return Tensor(arr, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=get_dtype()), requires_grad, name)


def _as_tensor(x, like: np.ndarray | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else get_dtype()
    return Tensor(np.asarray(x, dtype=dtype))


class Tape:
    """Ordered record of executed ops; use as a context manager.

    >>> with Tape() as tape:
    ...     y = tanh(x)
    ...     loss = sum_all(y)
    >>> grads = tape.backward(loss)
    """

    def __init__(self):
        self.ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.grads: dict[int, np.ndarray] = {}
        self._keep: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self.ops.append((out, tuple(inputs), backward))

    def _accumulate(self, t: Tensor, g: np.ndarray) -> None:
        key = id(t)
        acc = self.grads.get(key)
        if acc is None:
            acc = np.zeros(t.data.shape, dtype=t.data.dtype)
            self.grads[key] = acc
            self._keep[key] = t
        acc += g

    def backward(self, loss: Tensor, seed: np.ndarray | float = 1.0) -> "Tape":
        self.grads.clear()
        self._keep.clear()
        self._accumulate(loss, np.broadcast_to(np.asarray(seed, dtype=loss.data.dtype), loss.shape))
        for out, inputs, fn in reversed(self.ops):
            g = self.grads.get(id(out))
            if g is None:
                continue
            for inp, gi in zip(inputs, fn(g)):
                if gi is not None and inp.requires_grad:
                    self._accumulate(inp, gi)
        return self

    def gradient(self, t: Tensor) -> np.ndarray:
        g = self.grads.get(id(t))
        return np.zeros_like(t.data) if g is None else g


def _tape_stack() -> list[Tape]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def record(out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Attach ``backward`` to the active tape, if any; returns ``out``.

    ``backward(g)`` receives the output gradient and returns one gradient per
    input (``None`` for inputs that take none).
    """
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def affine(W: Tensor, x: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W.T + b`` over the last axis of ``x``; W is (m, n), x is (..., n)."""
    if W.data.ndim != 2 or x.data.shape[-1:] != W.data.shape[1:]:
        raise DimensionError(f"affine: weight shape {W.shape} does not conform with input shape {x.shape}")
    if b is not None and b.data.shape != W.data.shape[:1]:
        raise DimensionError(f"affine: bias shape {b.shape} does not conform with weight shape {W.shape}")
    y = x.data @ W.data.T
    if b is not None:
        y = y + b.data
    out = Tensor(y)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.data.shape[-1])
        gW = g2.T @ x2
        gx = (g @ W.data) if x.requires_grad else None
        gb = g2.sum(axis=0) if b is not None else None
        return (gW, gx, gb) if b is not None else (gW, gx)

    return record(out, (W, x, b) if b is not None else (W, x), backward)


def add(a, b) -> Tensor:
    a = _as_tensor(a, getattr(b, "data", None))
    b = _as_tensor(b, a.data)
    out = Tensor(a.data + b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, getattr(b, "data", None))
    b = _as_tensor(b, a.data)
    out = Tensor(a.data - b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, getattr(b, "data", None))
    b = _as_tensor(b, a.data)
    out = Tensor(a.data * b.data)
    return record(
        out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return record(Tensor(y), (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return record(Tensor(y), (x,), lambda g: (g * (1.0 - y * y),))


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def log_softmax(x: Tensor) -> Tensor:
    """Normalized log-probabilities over the last axis."""
    m = x.data.max(axis=-1, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return record(Tensor(y), (x,), backward)


def logsumexp(xs: Iterable[float]) -> float:
    """log(sum(exp(xs))) with max-shift; returns -inf for an empty input."""
    arr = np.asarray(list(xs) if not isinstance(xs, np.ndarray) else xs, dtype=np.float64).ravel()
    if arr.size == 0:
        return NEG_INF
    m = arr.max()
    if m == NEG_INF:
        return NEG_INF
    return float(m + np.log(np.exp(arr - m).sum()))


def logsumexp_axis(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Array version of :func:`logsumexp`; all -inf slices give -inf."""
    m = np.max(x, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        s = np.log(np.exp(x - safe).sum(axis=axis, keepdims=True)) + safe
    return np.squeeze(s, axis=axis)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    y = np.concatenate([p.data for p in parts], axis=axis)
    sizes = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return record(Tensor(y), tuple(parts), backward)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    y = np.stack([p.data for p in parts], axis=axis)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return record(Tensor(y), tuple(parts), backward)


def take(x: Tensor, idx, axis: int = 0, unique: bool = False) -> Tensor:
    """Select rows along ``axis``; repeated indices accumulate gradient.

    Pass ``unique=True`` when ``idx`` has no repeats to skip the scatter-add.
    """
    idx = np.asarray(idx)
    ax = axis % x.data.ndim
    y = np.take(x.data, idx, axis=ax)

    def backward(g):
        gx = np.zeros_like(x.data)
        gm = np.moveaxis(gx, ax, 0)
        span = list(range(ax, ax + idx.ndim))
        gi = np.moveaxis(g, span, list(range(idx.ndim)))
        if unique:
            gm[idx] = gi
        else:
            np.add.at(gm, idx, gi)
        return (gx,)

    return record(Tensor(y), (x,), backward)


def gather_last(x: Tensor, idx) -> Tensor:
    """``out[..., i] = x[..., idx[..., i]]`` (take along the last axis)."""
    idx = np.asarray(idx)
    y = np.take_along_axis(x.data, idx, axis=-1)

    def backward(g):
        gx = np.zeros_like(x.data)
        lead = np.indices(idx.shape, sparse=True)[:-1]
        np.add.at(gx, (*lead, idx), g)
        return (gx,)

    return record(Tensor(y), (x,), backward)


def scatter_rows(x: Tensor, idx, n: int, fill: float = 0.0) -> Tensor:
    """Inverse of :func:`take` on axis 0: rows ``idx`` of an ``n``-row array, ``fill`` elsewhere."""
    idx = np.asarray(idx, dtype=np.int64)
    y = np.full((n,) + x.shape[1:], fill, dtype=x.data.dtype)
    y[idx] = x.data
    return record(Tensor(y), (x,), lambda g: (g[idx],))


def reshape(x: Tensor, shape) -> Tensor:
    y = x.data.reshape(shape)
    return record(Tensor(y), (x,), lambda g: (g.reshape(x.shape),))


def cumsum(x: Tensor, axis: int = -1) -> Tensor:
    y = np.cumsum(x.data, axis=axis)

    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return record(Tensor(y), (x,), backward)


def mask_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant; no gradient flows there."""
    mask = np.asarray(mask, dtype=bool)
    y = np.where(mask, np.asarray(value, dtype=x.data.dtype), x.data)
    return record(Tensor(y), (x,), lambda g: (np.where(mask, 0.0, g),))


def sum_axis(x: Tensor, axis: int) -> Tensor:
    y = x.data.sum(axis=axis)
    return record(Tensor(y), (x,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),))


def sum_all(x: Tensor) -> Tensor:
    y = np.asarray(x.data.sum(), dtype=x.data.dtype)
    return record(Tensor(y), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or at rate 0."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return record(Tensor(x.data * keep), (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# finite-difference oracle


def grad_check(f: Callable[[Tensor], Tensor], theta, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps a parameter tensor to a scalar tensor.  Runs in 64-bit.
    Relative error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-6, 1e-4], got {eps}")
    with using_dtype("float64"):
        base = np.array(theta.data if isinstance(theta, Tensor) else theta, dtype=np.float64)
        p = Tensor(base.copy(), requires_grad=True)
        with Tape() as tape:
            out = f(p)
        if not np.isfinite(out.data).all():
            raise EvaluationError(f"non-finite function value {out.data}")
        analytic = tape.backward(out).gradient(p).copy()

        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(Tensor(base.copy())).data)
            flat[i] = orig - eps
            fm = float(f(Tensor(base.copy())).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise EvaluationError(f"non-finite function value near coordinate {i}")
            numeric.reshape(-1)[i] = (fp - fm) / (2 * eps)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if base.size else 0.0
