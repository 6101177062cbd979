"""Complexity benchmark: 2D selective scan versus naive attention.

Times ss2d_global over square grids and fits a log-log slope in the token
count; the quadratic-attention baseline is bundled for contrast.  Also
compares the compiled kernel backend against the pure-python fallback.
"""

from __future__ import annotations

import time

import numpy as np

from . import backend
from .scan import SsmParams, ss2d_global
from .tensor import Tensor

DEFAULT_SIZES = (16, 32, 64, 128)


def _best_time(fn, repeats=3, warmup=1):
    for _ in range(warmup):
        fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def naive_attention(x, wq, wk, wv, block=1024):
    """Single-head softmax attention over (L,C) tokens, O(L^2 C) time.

    Row-blocked so the L x L score matrix never materializes whole.
    """
    q = x @ wq
    k = x @ wk
    v = x @ wv
    scale = 1.0 / np.sqrt(x.shape[1])
    out = np.empty_like(q)
    for i in range(0, q.shape[0], block):
        scores = q[i : i + block] @ k.T * scale
        scores -= scores.max(axis=1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=1, keepdims=True)
        out[i : i + block] = scores @ v
    return out


def fit_loglog_slope(xs, ys):
    return float(np.polyfit(np.log(np.asarray(xs, dtype=np.float64)),
                            np.log(np.asarray(ys, dtype=np.float64)), 1)[0])


def run_complexity_bench(sizes=DEFAULT_SIZES, channels=16, n_state=8,
                         repeats=3, seed=0):
    """Time ss2d_global and the attention baseline over square grids.

    Returns {"rows": [(size, tokens, scan_s, attn_s), ...],
             "scan_slope": float, "attn_slope": float}.
    """
    rng = np.random.default_rng(seed)
    params = SsmParams(channels, n_state, rng, dtype=np.float32)
    wq, wk, wv = (rng.standard_normal((channels, channels)).astype(np.float32)
                  for _ in range(3))
    rows = []
    for size in sizes:
        x = rng.standard_normal((1, channels, size, size)).astype(np.float32)
        xt = Tensor(x)
        tokens = x.reshape(channels, -1).T.copy()
        scan_s = _best_time(lambda: ss2d_global(xt, params), repeats)
        attn_s = _best_time(lambda: naive_attention(tokens, wq, wk, wv), repeats)
        rows.append((size, size * size, scan_s, attn_s))
    counts = [r[1] for r in rows]
    return {
        "rows": rows,
        "scan_slope": fit_loglog_slope(counts, [r[2] for r in rows]),
        "attn_slope": fit_loglog_slope(counts, [r[3] for r in rows]),
    }


def write_bench_csv(path, result):
    with open(path, "w") as fh:
        fh.write("grid,tokens,ss2d_seconds,attention_seconds\n")
        for size, tokens, scan_s, attn_s in result["rows"]:
            fh.write(f"{size},{tokens},{scan_s:.6f},{attn_s:.6f}\n")
        fh.write(f"# scan_slope = {result['scan_slope']:.3f}\n")
        fh.write(f"# attn_slope = {result['attn_slope']:.3f}\n")


def run_backend_bench(length=4096, channels=16, n_state=8, repeats=3, seed=0):
    """Compare the compiled and pure-python scan kernels on one workload.

    Returns {"python_s": float, "compiled_s": float or None, "speedup": ...}.
    """
    rng = np.random.default_rng(seed)
    abar = rng.uniform(0.1, 0.9, (1, length, channels, n_state)).astype(np.float32)
    bu = rng.standard_normal(abar.shape).astype(np.float32)
    cm = rng.standard_normal((1, length, n_state)).astype(np.float32)
    py = backend.get("python")
    python_s = _best_time(lambda: py.scan_forward(abar, bu, cm), repeats)
    try:
        cx = backend.get("compiled")
    except ImportError:
        return {"python_s": python_s, "compiled_s": None, "speedup": None}
    compiled_s = _best_time(lambda: cx.scan_forward(abar, bu, cm), repeats)
    return {
        "python_s": python_s,
        "compiled_s": compiled_s,
        "speedup": python_s / compiled_s,
    }
