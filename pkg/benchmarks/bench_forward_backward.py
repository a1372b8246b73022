"""Time the segmentation DP on its numba and numpy paths.

    python3 benchmarks/bench_forward_backward.py [--batch 32] [--repeats 5]

Prints one row per source length with the median time of each path and the
speedup, after checking both paths agree.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from npmt import _kernels
from npmt.swan import _layout


def random_batch(rng, batch, n_src, ratio, max_len):
    srcs = [n_src] * batch
    tgts = [int(round(n_src * ratio)) for _ in range(batch)]
    lay = _layout(srcs, tgts)
    rows = int(sum(s * (t + 1) for s, t in zip(srcs, tgts)))
    flat = np.log(rng.dirichlet(np.ones(max_len + 1), size=rows))
    for b, (s, t) in enumerate(zip(srcs, tgts)):
        block = flat[lay.offsets[b] : lay.offsets[b] + s * (t + 1)].reshape(s, t + 1, max_len + 1)
        j = np.arange(t + 1)[:, None]
        k = np.arange(max_len + 1)[None, :]
        block[:, j + k > t] = -np.inf
    return flat, lay


def timed(fn, repeats):
    out = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--max-len", type=int, default=6)
    ap.add_argument("--lengths", default="8,16,32,64")
    a = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba unavailable or disabled (NPMT_NUMBA=0); nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'T_src':>6} {'numpy_ms':>10} {'numba_ms':>10} {'speedup':>8}")
    for n in (int(v) for v in a.lengths.split(",")):
        flat, lay = random_batch(rng, a.batch, n, 1.5, a.max_len)
        args = (flat, lay.offsets, lay.n_src, lay.n_tgt, True)
        ll_np, post_np = _kernels.forward_backward(*args, use_numba=False)
        ll_nb, post_nb = _kernels.forward_backward(*args, use_numba=True)  # also warms the JIT
        assert np.allclose(ll_np, ll_nb, rtol=1e-12, atol=1e-12)
        assert np.allclose(post_np, post_nb, atol=1e-12)
        t_np = timed(lambda: _kernels.forward_backward(*args, use_numba=False), a.repeats)
        t_nb = timed(lambda: _kernels.forward_backward(*args, use_numba=True), a.repeats)
        print(f"{n:>6} {t_np * 1e3:>10.2f} {t_nb * 1e3:>10.2f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
