"""Hot loops of the segmentation DP, with a numba path and a numpy path.

Set ``NPMT_NUMBA=0`` before import to force the pure-numpy implementations.
Both paths share one flat lattice layout: sentence ``b`` owns rows
``offsets[b] : offsets[b] + n_src[b] * (n_tgt[b] + 1)``, row index
``(t - 1) * (n_tgt[b] + 1) + j`` within the block, and column ``k`` is the
segment length.  Impossible cells hold ``-inf``.
"""

from __future__ import annotations

import os

import numpy as np

NEG_INF = -np.inf


def _numba_requested() -> bool:
    return os.environ.get("NPMT_NUMBA", "1").lower() not in ("0", "false", "no", "off")


try:
    if not _numba_requested():
        raise ImportError("numba disabled by NPMT_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy path


def _alpha_numpy(lat: np.ndarray, n_tgt: int) -> np.ndarray:
    """lat: (T', T+1, L+1).  Returns alpha of shape (T'+1, T+1)."""
    n_src, _, width = lat.shape
    alpha = np.full((n_src + 1, n_tgt + 1), NEG_INF)
    alpha[0, 0] = 0.0
    cand = np.empty((width, n_tgt + 1))
    for t in range(1, n_src + 1):
        prev = alpha[t - 1]
        cand.fill(NEG_INF)
        for k in range(min(width - 1, n_tgt) + 1):
            cand[k, k:] = prev[: n_tgt + 1 - k] + lat[t - 1, : n_tgt + 1 - k, k]
        m = cand.max(axis=0)
        safe = np.where(np.isfinite(m), m, 0.0)
        with np.errstate(divide="ignore"):
            alpha[t] = np.log(np.exp(cand - safe).sum(axis=0)) + safe
    return alpha


def _beta_numpy(lat: np.ndarray, n_tgt: int) -> np.ndarray:
    n_src, _, width = lat.shape
    beta = np.full((n_src + 1, n_tgt + 1), NEG_INF)
    beta[n_src, n_tgt] = 0.0
    cand = np.empty((width, n_tgt + 1))
    for t in range(n_src, 0, -1):
        nxt = beta[t]
        cand.fill(NEG_INF)
        for k in range(min(width - 1, n_tgt) + 1):
            cand[k, : n_tgt + 1 - k] = lat[t - 1, : n_tgt + 1 - k, k] + nxt[k:]
        m = cand.max(axis=0)
        safe = np.where(np.isfinite(m), m, 0.0)
        with np.errstate(divide="ignore"):
            beta[t - 1] = np.log(np.exp(cand - safe).sum(axis=0)) + safe
    return beta


def _posterior_numpy(lat, alpha, beta, loglik):
    n_src, n_pos, width = lat.shape
    n_tgt = n_pos - 1
    post = np.zeros_like(lat)
    for k in range(min(width - 1, n_tgt) + 1):
        score = alpha[:-1, : n_pos - k] + lat[:, : n_pos - k, k] + beta[1:, k:]
        with np.errstate(invalid="ignore"):
            post[:, : n_pos - k, k] = np.exp(score - loglik)
    return np.nan_to_num(post, nan=0.0)


def forward_backward_numpy(flat, offsets, n_src, n_tgt, want_grad=True):
    n = len(offsets)
    loglik = np.empty(n)
    post = np.zeros_like(flat) if want_grad else None
    width = flat.shape[1]
    for b in range(n):
        s, tp, tt = offsets[b], n_src[b], n_tgt[b]
        lat = flat[s : s + tp * (tt + 1)].reshape(tp, tt + 1, width)
        alpha = _alpha_numpy(lat, tt)
        loglik[b] = alpha[tp, tt]
        if want_grad and np.isfinite(loglik[b]):
            beta = _beta_numpy(lat, tt)
            post[s : s + tp * (tt + 1)] = _posterior_numpy(lat, alpha, beta, loglik[b]).reshape(-1, width)
    return loglik, post


# ---------------------------------------------------------------------------
# numba path

if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _lse2(a, b):
        if a == NEG_INF:
            return b
        if b == NEG_INF:
            return a
        if a > b:
            return a + np.log1p(np.exp(b - a))
        return b + np.log1p(np.exp(a - b))

    @njit(cache=True, nogil=True)
    def _forward_backward_numba(flat, offsets, n_src, n_tgt, want_grad):
        n = offsets.shape[0]
        width = flat.shape[1]
        loglik = np.empty(n)
        post = np.zeros_like(flat)
        for b in range(n):
            s = offsets[b]
            tp = n_src[b]
            tt = n_tgt[b]
            stride = tt + 1
            alpha = np.full((tp + 1, tt + 1), NEG_INF)
            alpha[0, 0] = 0.0
            for t in range(1, tp + 1):
                base = s + (t - 1) * stride
                for j in range(tt + 1):
                    # max-shifted sum over segment lengths ending at j
                    kmax = min(width - 1, j)
                    m = NEG_INF
                    for k in range(kmax + 1):
                        v = alpha[t - 1, j - k] + flat[base + j - k, k]
                        if v > m:
                            m = v
                    if m == NEG_INF:
                        continue
                    acc = 0.0
                    for k in range(kmax + 1):
                        v = alpha[t - 1, j - k] + flat[base + j - k, k]
                        if v != NEG_INF:
                            acc += np.exp(v - m)
                    alpha[t, j] = m + np.log(acc)
            ll = alpha[tp, tt]
            loglik[b] = ll
            if not want_grad or ll == NEG_INF:
                continue
            beta = np.full((tp + 1, tt + 1), NEG_INF)
            beta[tp, tt] = 0.0
            for t in range(tp, 0, -1):
                base = s + (t - 1) * stride
                for j in range(tt + 1):
                    kmax = min(width - 1, tt - j)
                    acc = NEG_INF
                    for k in range(kmax + 1):
                        acc = _lse2(acc, flat[base + j, k] + beta[t, j + k])
                    beta[t - 1, j] = acc
                for j in range(tt + 1):
                    a = alpha[t - 1, j]
                    if a == NEG_INF:
                        continue
                    kmax = min(width - 1, tt - j)
                    for k in range(kmax + 1):
                        v = a + flat[base + j, k] + beta[t, j + k]
                        if v != NEG_INF:
                            post[base + j, k] = np.exp(v - ll)
        return loglik, post


def forward_backward(flat, offsets, n_src, n_tgt, want_grad=True, use_numba=None):
    """Log-likelihood per sentence and segment posteriors for a flat lattice.

    Returns ``(loglik, post)``; ``post`` has the shape of ``flat`` (or is
    ``None`` with ``want_grad=False`` on the numpy path).  Sentences whose
    log-likelihood is ``-inf`` get an all-zero posterior block.
    """
    flat = np.ascontiguousarray(flat, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    n_src = np.ascontiguousarray(n_src, dtype=np.int64)
    n_tgt = np.ascontiguousarray(n_tgt, dtype=np.int64)
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba:
        if not HAVE_NUMBA:
            raise RuntimeError("numba path requested but numba is unavailable")
        ll, post = _forward_backward_numba(flat, offsets, n_src, n_tgt, want_grad)
        return ll, (post if want_grad else None)
    return forward_backward_numpy(flat, offsets, n_src, n_tgt, want_grad)


def alpha_table(lat: np.ndarray, n_tgt: int) -> np.ndarray:
    """Forward table for one sentence lattice of shape (T', T+1, L+1)."""
    return _alpha_numpy(np.asarray(lat, dtype=np.float64), n_tgt)


def beta_table(lat: np.ndarray, n_tgt: int) -> np.ndarray:
    return _beta_numpy(np.asarray(lat, dtype=np.float64), n_tgt)
