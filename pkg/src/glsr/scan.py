"""Selective-scan core: ZOH discretization, the S6 recurrence, its LTI
convolutional equivalent, and the four-direction 2D scan (global and
quadrant-local variants)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .tensor import (
    Tensor,
    _accum,
    _make,
    add,
    concat,
    flip,
    matmul,
    reshape,
    softplus,
    transpose,
)

DIRECTIONS = ("lr", "tb", "rl", "bt")


# ----- discretization -----------------------------------------------------


def phi(z):
    """(e^z - 1)/z elementwise, with a series branch for |z| < 1e-6."""
    z = np.asarray(z, dtype=np.float64)
    small = np.abs(z) < 1e-6
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2.0 + z * z / 6.0, np.expm1(zs) / zs)


def discretize(a, b, delta):
    """Zero-order-hold discretization of a diagonal system.

    abar = exp(delta*a); bbar = (delta*a)^-1 (exp(delta*a) - 1) * delta*b,
    evaluated elementwise on the diagonal with a series fallback near 0.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValueError("discretize requires delta > 0")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    z = delta * a
    abar = np.exp(z)
    bbar = delta * b * phi(z)
    return abar, bbar


# ----- spec-level sequence ops (numpy) ------------------------------------


@dataclass
class ScanSequence:
    """A directional unfolding of a patch grid into a token sequence."""

    tokens: np.ndarray  # (L, C)
    direction: str
    origin_shape: tuple  # (H_p, W_p)

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        hp, wp = self.origin_shape
        if self.tokens.shape[0] != hp * wp:
            raise ValueError("token count does not match origin shape")


def scan_expand(grid):
    """Unfold an (H_p, W_p, C) grid into the four directional sequences."""
    grid = np.asarray(grid)
    if grid.ndim != 3 or grid.shape[0] == 0 or grid.shape[1] == 0:
        raise ValueError("expected a non-empty (H_p, W_p, C) grid")
    hp, wp, c = grid.shape
    lr = grid.reshape(hp * wp, c)
    tb = grid.transpose(1, 0, 2).reshape(hp * wp, c)
    return [
        ScanSequence(lr, "lr", (hp, wp)),
        ScanSequence(tb, "tb", (hp, wp)),
        ScanSequence(lr[::-1], "rl", (hp, wp)),
        ScanSequence(tb[::-1], "bt", (hp, wp)),
    ]


def relayout(seq):
    """Lay a directional sequence back into its (H_p, W_p, C) grid."""
    hp, wp = seq.origin_shape
    c = seq.tokens.shape[1]
    t = seq.tokens
    if seq.direction == "lr":
        return t.reshape(hp, wp, c)
    if seq.direction == "tb":
        return t.reshape(wp, hp, c).transpose(1, 0, 2)
    if seq.direction == "rl":
        return t[::-1].reshape(hp, wp, c)
    return t[::-1].reshape(wp, hp, c).transpose(1, 0, 2)


def scan_merge(seqs):
    """Sum the four re-laid directional sequences back into one grid."""
    lengths = {s.tokens.shape[0] for s in seqs}
    shapes = {s.origin_shape for s in seqs}
    if len(lengths) != 1 or len(shapes) != 1:
        raise ValueError("scan_merge requires equal lengths and origin shapes")
    out = relayout(seqs[0]).astype(np.float64, copy=True)
    for s in seqs[1:]:
        out += relayout(s)
    return out


def selective_scan_recurrent(x, abar, bbar, cmat):
    """Run the discrete recurrence h_t = abar_t h_{t-1} + bbar_t x_t, y = C h.

    x: (L, C); abar/bbar: (C, S) or (L, C, S); cmat: (S,) or (L, S).
    """
    x = np.asarray(x, dtype=np.float64)
    l, c = x.shape
    abar = np.broadcast_to(np.asarray(abar, dtype=np.float64), (l,) + np.shape(abar)[-2:])
    bbar = np.broadcast_to(np.asarray(bbar, dtype=np.float64), abar.shape)
    cmat = np.broadcast_to(np.asarray(cmat, dtype=np.float64), (l, np.shape(cmat)[-1]))
    bu = bbar * x[:, :, None]
    # broadcast_to views are read-only; the kernels need writable C buffers
    req = ("C", "W", "O")
    y, h = backend.impl().scan_forward(
        np.require(abar[None], requirements=req),
        np.require(bu[None], requirements=req),
        np.require(cmat[None], requirements=req),
    )
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite values in selective scan output")
    return y[0]


def selective_scan_conv(x, abar, bbar, cmat):
    """LTI equivalent of the recurrence: causal convolution with the kernel
    K_m = sum_s C[s] * abar[.,s]^m * bbar[.,s]."""
    x = np.asarray(x, dtype=np.float64)
    abar = np.asarray(abar, dtype=np.float64)
    bbar = np.asarray(bbar, dtype=np.float64)
    cmat = np.asarray(cmat, dtype=np.float64)
    if abar.ndim != 2 or bbar.ndim != 2 or cmat.ndim != 1:
        raise ValueError("selective_scan_conv requires time-invariant parameters")
    l, c = x.shape
    m = np.arange(l)[:, None, None]
    kern = np.sum(cmat[None, None, :] * abar[None] ** m * bbar[None], axis=2)  # (L, C)
    y = np.empty_like(x)
    for j in range(c):
        y[:, j] = np.convolve(x[:, j], kern[:, j])[:l]
    return y


# ----- learned scan parameters & fused autodiff op ------------------------


class SsmParams:
    """Parameter bundle for one selective scan.

    a_log parameterises the diagonal state matrix A = -exp(a_log); x_proj
    maps a token to [delta_raw, B, C]; delta_bias shifts the per-channel
    timescale before the softplus.
    """

    def __init__(self, channels, n_state, rng, dtype=np.float32):
        self.channels = channels
        self.n_state = n_state
        a = np.tile(np.log(np.arange(1, n_state + 1, dtype=np.float64)), (channels, 1))
        self.a_log = Tensor(a.astype(dtype), requires_grad=True)
        w = rng.standard_normal((2 * n_state + 1, channels)) * 0.02
        self.x_proj_w = Tensor(w.astype(dtype), requires_grad=True)
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=channels))
        self.delta_bias = Tensor(np.log(np.expm1(dt)).astype(dtype), requires_grad=True)

    def parameters(self):
        return {
            "a_log": self.a_log,
            "x_proj_w": self.x_proj_w,
            "delta_bias": self.delta_bias,
        }


def ssm_scan_op(x, a_log, b, cmat, delta, euler=False):
    """Fused selective scan with ZOH discretization.

    x: (N,L,C) tokens; a_log: (C,S); b, cmat: (N,L,S); delta: (N,L,C) > 0.
    Returns y: (N,L,C).  The discretization, input gating and recurrence are
    one primitive with a hand-written backward pass.
    """
    kern = backend.impl()
    xd = np.ascontiguousarray(x.data)
    bd = np.ascontiguousarray(b.data)
    cd = np.ascontiguousarray(cmat.data)
    dd = np.ascontiguousarray(delta.data)
    a = np.ascontiguousarray(-np.exp(a_log.data))
    abar, coef, bu = kern.ssm_prep(xd, a, bd, dd, euler)
    y, h = kern.scan_forward(abar, bu, cd)

    def bwd(g):
        da_bar, dbu, dc = kern.scan_backward(abar, cd, h, np.ascontiguousarray(g))
        db, dx, ddelta, dza = kern.ssm_grad(
            da_bar, dbu, xd, a, bd, dd, abar, coef, euler
        )
        _accum(b, db)
        _accum(x, dx)
        _accum(cmat, dc)
        _accum(delta, ddelta)
        # a = -exp(a_log) so d/da_log = dza * a
        _accum(a_log, dza * a)

    return _make(y, (x, a_log, b, cmat, delta), bwd)


def selective_scan(tokens, params, euler=False):
    """Project per-token (delta, B, C) from the tokens and run the scan."""
    n, l, c = tokens.shape
    s = params.n_state
    proj = matmul(reshape(tokens, (n * l, c)), transpose(params.x_proj_w, (1, 0)))
    proj = reshape(proj, (n, l, 2 * s + 1))
    delta = softplus(add(proj[:, :, 0:1], params.delta_bias))
    b = proj[:, :, 1 : s + 1]
    cmat = proj[:, :, s + 1 :]
    return ssm_scan_op(tokens, params.a_log, b, cmat, delta, euler=euler)


# ----- 2D selective scan --------------------------------------------------


def _params_for(params, i):
    return params[i] if isinstance(params, (list, tuple)) else params


def ss2d_global(grid, params, euler=False):
    """Four-direction scan over the whole (N,C,H_p,W_p) patch grid."""
    n, c, hp, wp = grid.shape
    tok_lr = reshape(transpose(grid, (0, 2, 3, 1)), (n, hp * wp, c))
    tok_tb = reshape(transpose(grid, (0, 3, 2, 1)), (n, hp * wp, c))
    y_lr = selective_scan(tok_lr, _params_for(params, 0), euler)
    y_tb = selective_scan(tok_tb, _params_for(params, 1), euler)
    y_rl = flip(selective_scan(flip(tok_lr, 1), _params_for(params, 2), euler), 1)
    y_bt = flip(selective_scan(flip(tok_tb, 1), _params_for(params, 3), euler), 1)
    g_lr = transpose(reshape(y_lr, (n, hp, wp, c)), (0, 3, 1, 2))
    g_rl = transpose(reshape(y_rl, (n, hp, wp, c)), (0, 3, 1, 2))
    g_tb = transpose(reshape(y_tb, (n, wp, hp, c)), (0, 3, 2, 1))
    g_bt = transpose(reshape(y_bt, (n, wp, hp, c)), (0, 3, 2, 1))
    return add(add(g_lr, g_tb), add(g_rl, g_bt))


def ss2d_local(grid, params, euler=False):
    """Independent four-direction scans inside the four quadrants.

    The top/left quadrants take the ceiling half when an extent is odd.
    """
    n, c, hp, wp = grid.shape
    hs, ws = (hp + 1) // 2, (wp + 1) // 2
    if hs == hp and ws == wp:
        return ss2d_global(grid, params, euler)
    rows = []
    for rs in ((slice(0, hs)), (slice(hs, hp))):
        cols = []
        for cs in ((slice(0, ws)), (slice(ws, wp))):
            q = grid[:, :, rs, cs]
            if q.shape[2] == 0 or q.shape[3] == 0:
                cols.append(None)
            else:
                cols.append(ss2d_global(q, params, euler))
        cols = [q for q in cols if q is not None]
        if not cols:
            continue  # degenerate extent: this half has no rows
        rows.append(cols[0] if len(cols) == 1 else concat(cols, axis=3))
    return rows[0] if len(rows) == 1 else concat(rows, axis=2)
